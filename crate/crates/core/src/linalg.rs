//! Dense row-major linear algebra and finite-difference derivatives.
//!
//! Everything in the crate runs on [`DenseMatrix`] / [`DenseVector`]. The one
//! structured object in the project (the photometric JᵀJ) is handled by
//! explicit block types in [`crate::photo`]; there is no general sparse
//! matrix here. Large symmetric solves go through [`PackedCholesky`], which
//! stores only the lower triangle.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &DenseVector) -> DenseVector {
        assert_eq!(self.cols, x.len(), "matvec dimensions");
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x.as_slice());
        }
        DenseVector::from_vec(out)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimensions");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let row = out.row_mut(i);
                for (o, &b) in row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// AᵀA, accumulated column-by-column over rows.
    pub fn ata(&self) -> DenseMatrix {
        let n = self.cols;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..self.rows {
            let r = self.row(i);
            for j in 0..n {
                let a = r[j];
                if a == 0.0 {
                    continue;
                }
                let orow = out.row_mut(j);
                for (o, &b) in orow.iter_mut().zip(r) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Aᵀb.
    pub fn atb(&self, b: &DenseVector) -> DenseVector {
        assert_eq!(self.rows, b.len(), "atb dimensions");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let s = b[i];
            if s == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * s;
            }
        }
        DenseVector::from_vec(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dense f64 vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        DenseVector {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        DenseVector { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot dimensions");
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// self + s * other.
    pub fn add_scaled(&self, s: f64, other: &DenseVector) -> DenseVector {
        assert_eq!(self.len(), other.len(), "add_scaled dimensions");
        DenseVector::from_vec(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        self.add_scaled(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

// Four independent accumulators break the serial FP dependency chain so the
// loop vectorizes; the summation order is fixed, keeping results
// deterministic across runs.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// Relative pivot threshold: a Cholesky pivot at or below
/// `1e-12 * max(diag)` signals rank deficiency rather than rounding noise.
pub const PIVOT_RELATIVE_EPS: f64 = 1e-12;

/// Cholesky factorization of a symmetric positive-definite matrix in packed
/// lower-triangular row-major storage. Row i occupies `i*(i+1)/2 .. i*(i+1)/2 + i + 1`.
///
/// The row-Cholesky (Banachiewicz) recurrence only ever takes dot products of
/// contiguous row prefixes, which keeps the large photometric solves cache
/// friendly.
pub struct PackedCholesky {
    n: usize,
    l: Vec<f64>,
}

#[inline]
pub fn packed_row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl PackedCholesky {
    /// Factor a packed lower triangle in place. `max_diag` is the largest
    /// diagonal entry of the original matrix, used for the pivot threshold.
    pub fn factor(mut packed: Vec<f64>, n: usize, max_diag: f64) -> Result<Self> {
        assert_eq!(packed.len(), n * (n + 1) / 2, "packed length");
        let eps = PIVOT_RELATIVE_EPS * max_diag;
        for i in 0..n {
            let row_i = packed_row_start(i);
            for j in 0..=i {
                let row_j = packed_row_start(j);
                let (head, tail) = packed.split_at_mut(row_i);
                let lrow_j: &[f64] = if j < i {
                    &head[row_j..row_j + j]
                } else {
                    &tail[..j]
                };
                let lrow_i = &tail[..j];
                let s = dot(lrow_i, lrow_j);
                if j < i {
                    let djj = head[row_j + j];
                    tail[j] = (tail[j] - s) / djj;
                } else {
                    let pivot = tail[j] - s;
                    if pivot <= eps || !pivot.is_finite() {
                        return Err(Error::NotPositiveDefinite { index: i, pivot });
                    }
                    tail[j] = pivot.sqrt();
                }
            }
        }
        Ok(PackedCholesky { n, l: packed })
    }

    /// Solve L Lᵀ x = b.
    pub fn solve(&self, b: &DenseVector) -> Result<DenseVector> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve rhs",
                expected: self.n,
                got: b.len(),
            });
        }
        let n = self.n;
        let mut y = b.as_slice().to_vec();
        // Forward substitution: L y = b.
        for i in 0..n {
            let row = packed_row_start(i);
            let s = dot(&self.l[row..row + i], &y[..i]);
            y[i] = (y[i] - s) / self.l[row + i];
        }
        // Back substitution: Lᵀ x = y.
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[packed_row_start(k) + i] * y[k];
            }
            y[i] = s / self.l[packed_row_start(i) + i];
        }
        Ok(DenseVector::from_vec(y))
    }
}

/// Solve A x = b for symmetric positive-definite A by Cholesky factorization.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot falls at or below
/// `1e-12 * max(diag(A))`, which is how rank deficiency is surfaced to
/// callers (they respond by adding damping).
pub fn cholesky_solve(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "cholesky matrix (square)",
            expected: a.rows(),
            got: a.cols(),
        });
    }
    if a.rows() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cholesky rhs",
            expected: a.rows(),
            got: b.len(),
        });
    }
    let n = a.rows();
    let scale = a.max_abs();
    let mut max_asym = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            max_asym = max_asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if max_asym > 1e-10 * scale.max(1.0) {
        return Err(Error::NotSymmetric { max_asym });
    }
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    let mut max_diag = 0.0_f64;
    for i in 0..n {
        packed.extend_from_slice(&a.row(i)[..=i]);
        max_diag = max_diag.max(a.get(i, i));
    }
    PackedCholesky::factor(packed, n, max_diag)?.solve(b)
}

/// Default central-difference step; balances truncation against cancellation
/// at double precision.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian of `f` at `x`: entry (j, k) is
/// `(f_j(x + h e_k) - f_j(x - h e_k)) / (2h)`.
pub fn finite_diff_jacobian<F>(f: F, x: &DenseVector, h: f64) -> Result<DenseMatrix>
where
    F: Fn(&DenseVector) -> Result<DenseVector>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let n = x.len();
    let mut cols: Vec<DenseVector> = Vec::with_capacity(n);
    let mut dim_r = None;
    for k in 0..n {
        let mut xp = x.clone();
        xp[k] += h;
        let fp = f(&xp)?;
        let mut xm = x.clone();
        xm[k] -= h;
        let fm = f(&xm)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation("finite_diff_jacobian probe"));
        }
        if fp.len() != fm.len() {
            return Err(Error::DimensionMismatch {
                context: "finite_diff_jacobian output",
                expected: fp.len(),
                got: fm.len(),
            });
        }
        match dim_r {
            None => dim_r = Some(fp.len()),
            Some(m) if m != fp.len() => {
                return Err(Error::DimensionMismatch {
                    context: "finite_diff_jacobian output",
                    expected: m,
                    got: fp.len(),
                })
            }
            _ => {}
        }
        let col: Vec<f64> = fp
            .as_slice()
            .iter()
            .zip(fm.as_slice())
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        cols.push(DenseVector::from_vec(col));
    }
    let m = dim_r.unwrap_or(0);
    Ok(DenseMatrix::from_fn(m, n, |i, j| cols[j][i]))
}
