//! The Φ(J, r) feature transform fed to the update predictor.
//!
//! Small problems get a fixed-length vector [vec(JᵀJ), Jᵀr, E]; per-pixel
//! problems get a compact image: the block-sparse JᵀJ compressed into one
//! depth-diagonal channel, six depth-pose coupling channels, the depth
//! gradient channel and the per-pixel residual, plus a 42-entry global
//! vector carrying the dense pose block. Everything passes through the
//! scale-compression map s(v) = sign(v)·ln(1+|v|).

use super::cell::ChannelImage;
use crate::linalg::{DenseMatrix, DenseVector};
use crate::photo::{NormalBlocks, StructuredJacobian};
use crate::{Error, Result};

/// Per-pixel channels: JᵀJ depth diagonal, six depth-pose couplings, Jᵀr
/// depth entry, pixel residual.
pub const PIXEL_CHANNELS: usize = 9;

/// Global pose feature vector length: pose-block upper triangle (21), pose
/// gradient (6), pose diagonal for scale reference (6), objective, previous
/// step norm, normalized iteration index, zero padding to 42.
pub const GLOBAL_FEATURES: usize = 42;

/// Scale compression s(v) = sign(v)·ln(1+|v|); keeps features bounded across
/// instances whose residual magnitudes vary over orders of magnitude.
#[inline]
pub fn scale_compress(v: f64) -> f64 {
    if v >= 0.0 {
        v.ln_1p()
    } else {
        -(-v).ln_1p()
    }
}

/// Inverse of [`scale_compress`].
#[inline]
pub fn scale_decompress(v: f64) -> f64 {
    if v >= 0.0 {
        v.exp_m1()
    } else {
        -(-v).exp_m1()
    }
}

/// Fixed-length feature vector for small problems:
/// [vec(JᵀJ), Jᵀr, ½‖r‖²], scale-compressed. Length dim_x² + dim_x + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub data: DenseVector,
    pub dim_x: usize,
}

/// Maximum parameter count for the fixed-length feature regime.
pub const SMALL_PROBLEM_MAX_DIM: usize = 8;

pub fn phi_small(j: &DenseMatrix, r: &DenseVector) -> Result<FeatureVector> {
    let dim_x = j.cols();
    if dim_x > SMALL_PROBLEM_MAX_DIM {
        return Err(Error::ShapeMismatch {
            context: "phi_small",
            expected: format!("dim_x <= {SMALL_PROBLEM_MAX_DIM}"),
            got: format!("dim_x = {dim_x}"),
        });
    }
    if j.rows() != r.len() {
        return Err(Error::DimensionMismatch {
            context: "phi_small residual",
            expected: j.rows(),
            got: r.len(),
        });
    }
    let jtj = j.ata();
    let jtr = j.atb(r);
    let energy = 0.5 * r.dot(r);
    let mut data = Vec::with_capacity(dim_x * dim_x + dim_x + 1);
    data.extend(jtj.data().iter().map(|v| scale_compress(*v)));
    data.extend(jtr.as_slice().iter().map(|v| scale_compress(*v)));
    data.push(scale_compress(energy));
    let out = DenseVector::from_vec(data);
    if !out.is_finite() {
        return Err(Error::NonFiniteEvaluation("phi_small features"));
    }
    Ok(FeatureVector { data: out, dim_x })
}

/// Compressed image form of the block-sparse JᵀJ plus global pose features.
#[derive(Debug, Clone)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    /// PIXEL_CHANNELS x height x width, scale-compressed.
    pub channels: ChannelImage,
    /// GLOBAL_FEATURES entries, scale-compressed.
    pub global: [f64; GLOBAL_FEATURES],
}

/// Build the feature image from the structured Jacobian and residual.
/// `energy` is ½‖r‖², `prev_step_norm` is ‖Δx‖ of the previous iteration (0
/// at the start), `iter_frac` is iteration_index / N.
pub fn phi_dense(
    sj: &StructuredJacobian,
    r: &DenseVector,
    energy: f64,
    prev_step_norm: f64,
    iter_frac: f64,
) -> Result<FeatureImage> {
    let n = sj.pixels();
    if r.len() != n {
        return Err(Error::LayoutMismatch(format!(
            "residual length {} does not match {}x{} pixel image",
            r.len(),
            sj.width,
            sj.height
        )));
    }
    let blocks = NormalBlocks::build(sj, r);
    let mut channels = ChannelImage::zeros(PIXEL_CHANNELS, sj.height, sj.width);
    for p in 0..n {
        channels.set_flat(0, p, scale_compress(blocks.depth_diag[p]));
        for k in 0..6 {
            channels.set_flat(1 + k, p, scale_compress(blocks.coupling.get(p, k)));
        }
        channels.set_flat(7, p, scale_compress(blocks.jtr_depth[p]));
        channels.set_flat(8, p, scale_compress(r[p]));
    }
    let mut global = [0.0; GLOBAL_FEATURES];
    let mut idx = 0;
    for k in 0..6 {
        for l in k..6 {
            global[idx] = scale_compress(blocks.pose_gram[k][l]);
            idx += 1;
        }
    }
    for k in 0..6 {
        global[idx] = scale_compress(blocks.jtr_pose[k]);
        idx += 1;
    }
    for k in 0..6 {
        global[idx] = scale_compress(blocks.pose_gram[k][k]);
        idx += 1;
    }
    global[idx] = scale_compress(energy);
    global[idx + 1] = scale_compress(prev_step_norm);
    global[idx + 2] = scale_compress(iter_frac);
    // Remaining entries stay zero padding.
    debug_assert_eq!(idx + 3, 36);
    if !channels.data.iter().all(|v| v.is_finite()) || !global.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteEvaluation("phi_dense features"));
    }
    Ok(FeatureImage {
        width: sj.width,
        height: sj.height,
        channels,
        global,
    })
}

impl FeatureImage {
    /// Reconstruct the full (n+6)x(n+6) JᵀJ from the compressed form by
    /// inverting the scale compression. The compression is structurally
    /// lossless: every nonzero block of JᵀJ is recoverable.
    pub fn materialize_jtj(&self) -> DenseMatrix {
        let n = self.width * self.height;
        let mut m = DenseMatrix::zeros(n + 6, n + 6);
        for p in 0..n {
            m.set(p, p, scale_decompress(self.channels.get_flat(0, p)));
            for k in 0..6 {
                let c = scale_decompress(self.channels.get_flat(1 + k, p));
                m.set(p, n + k, c);
                m.set(n + k, p, c);
            }
        }
        let mut idx = 0;
        for k in 0..6 {
            for l in k..6 {
                let v = scale_decompress(self.global[idx]);
                m.set(n + k, n + l, v);
                m.set(n + l, n + k, v);
                idx += 1;
            }
        }
        m
    }
}
