//! Synthetic two-parameter curve fitting: four families, seeded instance
//! generation with Gaussian observation noise, and the problem adapter the
//! solvers consume.

use crate::linalg::{DenseMatrix, DenseVector};
use crate::problem::LeastSquaresProblem;
use crate::rng::{sample_normal, RngState};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Observation noise sigma applied to generated instances.
pub const NOISE_SIGMA: f64 = 0.1;

/// Threshold below which sinc and its derivative switch to series expansions.
const SINC_SERIES_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    ExpSum,
    Sine,
    Sinc,
    Gaussian,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 4] = [
        FamilyTag::ExpSum,
        FamilyTag::Sine,
        FamilyTag::Sinc,
        FamilyTag::Gaussian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyTag::ExpSum => "expsum",
            FamilyTag::Sine => "sine",
            FamilyTag::Sinc => "sinc",
            FamilyTag::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<FamilyTag> {
        match s {
            "expsum" => Ok(FamilyTag::ExpSum),
            "sine" => Ok(FamilyTag::Sine),
            "sinc" => Ok(FamilyTag::Sinc),
            "gaussian" => Ok(FamilyTag::Gaussian),
            other => Err(Error::InvalidConfig(format!("unknown curve family '{other}'"))),
        }
    }
}

/// A curve family plus its parameter sampling ranges and t-grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveFamily {
    pub tag: FamilyTag,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub t_count: usize,
    pub t_interval: (f64, f64),
}

impl CurveFamily {
    /// Standard configuration: 25 uniform sample points on [-2.5, 2.5] and
    /// parameter ranges that are non-degenerate but basin-sensitive for
    /// plain LM (wide frequency ranges, sharp gaussian peaks).
    pub fn standard(tag: FamilyTag) -> Self {
        use std::f64::consts::PI;
        let (a_range, b_range) = match tag {
            FamilyTag::ExpSum => ((-1.0, 0.5), (-1.0, 0.5)),
            FamilyTag::Sine => ((0.5, 6.0), (-PI, PI)),
            FamilyTag::Sinc => ((0.5, 6.0), (-PI, PI)),
            FamilyTag::Gaussian => ((-2.0, 2.0), (0.12, 0.8)),
        };
        CurveFamily {
            tag,
            a_range,
            b_range,
            t_count: 25,
            t_interval: (-2.5, 2.5),
        }
    }

    pub fn t_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.t_interval;
        let m = self.t_count;
        (0..m)
            .map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64)
            .collect()
    }

    /// Shared initial iterate: the midpoint of the sampling ranges.
    pub fn initial_guess(&self) -> DenseVector {
        DenseVector::from_vec(vec![
            0.5 * (self.a_range.0 + self.a_range.1),
            0.5 * (self.b_range.0 + self.b_range.1),
        ])
    }
}

fn sinc(u: f64) -> f64 {
    if u.abs() < SINC_SERIES_CUTOFF {
        // sin(u)/u = 1 - u²/6 + u⁴/120 - ...
        1.0 - u * u / 6.0 + u * u * u * u / 120.0
    } else {
        u.sin() / u
    }
}

fn sinc_prime(u: f64) -> f64 {
    if u.abs() < SINC_SERIES_CUTOFF {
        // d/du [sin(u)/u] = -u/3 + u³/30 - ...
        -u / 3.0 + u * u * u / 30.0
    } else {
        (u.cos() - sinc(u)) / u
    }
}

/// Evaluate the family curve at t.
pub fn curve_value(tag: FamilyTag, a: f64, b: f64, t: f64) -> Result<f64> {
    match tag {
        FamilyTag::ExpSum => Ok((a * t).exp() + (b * t).exp()),
        FamilyTag::Sine => Ok((a * t + b).sin()),
        FamilyTag::Sinc => Ok(sinc(a * t + b)),
        FamilyTag::Gaussian => {
            if b <= 0.0 {
                return Err(Error::DomainError(format!(
                    "gaussian sigma must be positive, got {b}"
                )));
            }
            let d = (t - a) / b;
            Ok((-0.5 * d * d).exp() / (b * (2.0 * std::f64::consts::PI).sqrt()))
        }
    }
}

/// Analytic partials (∂f/∂a, ∂f/∂b) at t. The residual r_j = f(a,b,t_j) - y_j
/// shares these rows since the observations are constant.
pub fn curve_partials(tag: FamilyTag, a: f64, b: f64, t: f64) -> Result<(f64, f64)> {
    match tag {
        FamilyTag::ExpSum => Ok((t * (a * t).exp(), t * (b * t).exp())),
        FamilyTag::Sine => {
            let c = (a * t + b).cos();
            Ok((t * c, c))
        }
        FamilyTag::Sinc => {
            let d = sinc_prime(a * t + b);
            Ok((t * d, d))
        }
        FamilyTag::Gaussian => {
            let f = curve_value(tag, a, b, t)?;
            let d = t - a;
            Ok((f * d / (b * b), f * (d * d / (b * b * b) - 1.0 / b)))
        }
    }
}

/// Analytic m×2 Jacobian over a t-grid.
pub fn curve_jacobian(tag: FamilyTag, a: f64, b: f64, t_grid: &[f64]) -> Result<DenseMatrix> {
    let mut j = DenseMatrix::zeros(t_grid.len(), 2);
    for (row, &t) in t_grid.iter().enumerate() {
        let (da, db) = curve_partials(tag, a, b, t)?;
        j.set(row, 0, da);
        j.set(row, 1, db);
    }
    Ok(j)
}

/// One sampled fitting problem: ground-truth parameters, t-grid and noisy
/// observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveInstance {
    pub family: CurveFamily,
    pub truth: (f64, f64),
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Sample ground-truth parameters uniformly from the family ranges, evaluate
/// on the grid and add N(0, sigma²) noise. Deterministic per seed.
pub fn sample_instance(family: &CurveFamily, rng: &mut RngState) -> CurveInstance {
    sample_instance_with_sigma(family, rng, NOISE_SIGMA)
}

pub fn sample_instance_with_sigma(
    family: &CurveFamily,
    rng: &mut RngState,
    sigma: f64,
) -> CurveInstance {
    let a = rng.uniform(family.a_range.0, family.a_range.1);
    let b = rng.uniform(family.b_range.0, family.b_range.1);
    let t = family.t_grid();
    let y: Vec<f64> = t
        .iter()
        .map(|&tj| {
            let clean = curve_value(family.tag, a, b, tj).expect("in-range parameters");
            clean + sample_normal(0.0, sigma, rng).expect("sigma >= 0")
        })
        .collect();
    CurveInstance {
        family: family.clone(),
        truth: (a, b),
        t,
        y,
        noise_sigma: sigma,
        seed: rng.seed(),
    }
}

/// Problem adapter over a sampled instance.
pub struct CurveProblem {
    instance: CurveInstance,
    truth: DenseVector,
}

impl CurveProblem {
    pub fn new(instance: CurveInstance) -> Self {
        let truth = DenseVector::from_vec(vec![instance.truth.0, instance.truth.1]);
        CurveProblem { instance, truth }
    }

    pub fn instance(&self) -> &CurveInstance {
        &self.instance
    }

    pub fn initial_guess(&self) -> DenseVector {
        self.instance.family.initial_guess()
    }
}

impl LeastSquaresProblem for CurveProblem {
    fn dim_x(&self) -> usize {
        2
    }

    fn dim_r(&self) -> usize {
        self.instance.t.len()
    }

    fn residuals(&self, x: &DenseVector) -> Result<DenseVector> {
        let (a, b) = (x[0], x[1]);
        let mut r = Vec::with_capacity(self.instance.t.len());
        for (tj, yj) in self.instance.t.iter().zip(&self.instance.y) {
            r.push(curve_value(self.instance.family.tag, a, b, *tj)? - yj);
        }
        Ok(DenseVector::from_vec(r))
    }

    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        curve_jacobian(self.instance.family.tag, x[0], x[1], &self.instance.t)
    }

    fn ground_truth(&self) -> Option<&DenseVector> {
        Some(&self.truth)
    }

    fn family(&self) -> &str {
        self.instance.family.tag.as_str()
    }

    /// The gaussian family needs a positive scale parameter; other families
    /// are unconstrained.
    fn clamp_iterate(&self, x: &mut DenseVector) {
        if self.instance.family.tag == FamilyTag::Gaussian && x[1] < 1e-3 {
            x[1] = 1e-3;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::finite_diff_jacobian;
    use std::f64::consts::PI;

    #[test]
    fn sine_quarter_period() {
        assert!((curve_value(FamilyTag::Sine, 1.0, 0.0, PI / 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sinc_removable_singularity() {
        // a*t + b = 0 at t = 1, a = 2, b = -2.
        assert_eq!(curve_value(FamilyTag::Sinc, 2.0, -2.0, 1.0).unwrap(), 1.0);
        // Series region accuracy.
        let v = curve_value(FamilyTag::Sinc, 1e-9, 0.0, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-17);
    }

    #[test]
    fn sinc_continuous_through_zero() {
        // Both branches agree with an independent higher-order expansion
        // around the switch point, so the cutoff introduces no jump.
        for scale in [0.5, 0.8, 0.9999, 1.0001, 1.2, 2.0] {
            let u = SINC_SERIES_CUTOFF * scale;
            let u2 = u * u;
            let sinc_ref = 1.0 - u2 / 6.0 + u2 * u2 / 120.0 - u2 * u2 * u2 / 5040.0;
            let prime_ref = -u / 3.0 + u * u2 / 30.0 - u * u2 * u2 / 840.0;
            assert!((sinc(u) - sinc_ref).abs() < 1e-15, "sinc at {u}");
            assert!((sinc_prime(u) - prime_ref).abs() < 1e-12, "sinc' at {u}");
        }
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let v = curve_value(FamilyTag::Gaussian, 0.0, 1.0, 0.0).unwrap();
        assert!((v - 0.3989422804014327).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rejects_nonpositive_sigma() {
        assert!(matches!(
            curve_value(FamilyTag::Gaussian, 0.0, 0.0, 0.0),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn sine_jacobian_at_origin() {
        let t = vec![-1.0, 0.0, 2.0];
        let j = curve_jacobian(FamilyTag::Sine, 0.0, 0.0, &t).unwrap();
        for (row, &tj) in t.iter().enumerate() {
            assert_eq!(j.get(row, 0), tj);
            assert_eq!(j.get(row, 1), 1.0);
        }
    }

    #[test]
    fn sinc_partials_vanish_at_peak() {
        let (da, db) = curve_partials(FamilyTag::Sinc, 1.0, -1.0, 1.0).unwrap();
        assert_eq!(da, 0.0);
        assert_eq!(db, 0.0);
    }

    #[test]
    fn all_families_match_finite_differences() {
        let mut rng = RngState::new(1234);
        for tag in FamilyTag::ALL {
            let family = CurveFamily::standard(tag);
            for _ in 0..25 {
                let a = rng.uniform(family.a_range.0, family.a_range.1);
                let b = rng.uniform(family.b_range.0, family.b_range.1);
                let t = family.t_grid();
                let analytic = curve_jacobian(tag, a, b, &t).unwrap();
                let tref = t.clone();
                let f = move |x: &DenseVector| {
                    let mut out = Vec::with_capacity(tref.len());
                    for &tj in &tref {
                        out.push(curve_value(tag, x[0], x[1], tj)?);
                    }
                    Ok(DenseVector::from_vec(out))
                };
                let fd =
                    finite_diff_jacobian(f, &DenseVector::from_vec(vec![a, b]), 1e-5).unwrap();
                let scale = fd.max_abs().max(1e-12);
                for i in 0..fd.rows() {
                    for jx in 0..2 {
                        let rel = (analytic.get(i, jx) - fd.get(i, jx)).abs() / scale;
                        assert!(
                            rel < 1e-5,
                            "{:?} a={a} b={b} row {i} col {jx}: rel {rel}",
                            tag
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_instance_matches_curve() {
        let family = CurveFamily::standard(FamilyTag::Sine);
        let mut rng = RngState::new(7).derive(1);
        let inst = sample_instance_with_sigma(&family, &mut rng, 0.0);
        for (tj, yj) in inst.t.iter().zip(&inst.y) {
            let clean = curve_value(FamilyTag::Sine, inst.truth.0, inst.truth.1, *tj).unwrap();
            assert_eq!(*yj, clean);
        }
    }

    #[test]
    fn fixed_seed_reproduces_instance() {
        let family = CurveFamily::standard(FamilyTag::Gaussian);
        let a = sample_instance(&family, &mut RngState::new(42).derive(3));
        let b = sample_instance(&family, &mut RngState::new(42).derive(3));
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn parameter_marginals_are_uniform_by_ks() {
        // Kolmogorov-Smirnov test at the 1% level: critical value 1.63/sqrt(n).
        let family = CurveFamily::standard(FamilyTag::Sine);
        let root = RngState::new(99);
        let n = 10_000;
        let mut a_samples = Vec::with_capacity(n);
        let mut b_samples = Vec::with_capacity(n);
        for i in 0..n {
            let inst = sample_instance(&family, &mut root.derive(i as u64));
            a_samples.push(inst.truth.0);
            b_samples.push(inst.truth.1);
        }
        let ks = |samples: &mut Vec<f64>, lo: f64, hi: f64| -> f64 {
            samples.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let n = samples.len() as f64;
            samples
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let cdf = (s - lo) / (hi - lo);
                    let lo_emp = i as f64 / n;
                    let hi_emp = (i + 1) as f64 / n;
                    (cdf - lo_emp).abs().max((cdf - hi_emp).abs())
                })
                .fold(0.0_f64, f64::max)
        };
        let crit = 1.63 / (n as f64).sqrt();
        let da = ks(&mut a_samples, family.a_range.0, family.a_range.1);
        let db = ks(&mut b_samples, family.b_range.0, family.b_range.1);
        assert!(da < crit, "KS statistic for a: {da} >= {crit}");
        assert!(db < crit, "KS statistic for b: {db} >= {crit}");
    }

    #[test]
    fn objective_matches_brute_force_sum() {
        let family = CurveFamily::standard(FamilyTag::Sine);
        let inst = sample_instance(&family, &mut RngState::new(5).derive(0));
        let p = CurveProblem::new(inst.clone());
        let x = DenseVector::from_vec(vec![1.0, 0.3]);
        let e = crate::problem::objective(&p, &x).unwrap();
        let mut brute = 0.0;
        for (tj, yj) in inst.t.iter().zip(&inst.y) {
            let r = curve_value(FamilyTag::Sine, 1.0, 0.3, *tj).unwrap() - yj;
            brute += r * r;
        }
        brute *= 0.5;
        // Summation order differs between the two routes.
        assert!((e - brute).abs() < 1e-12 * e.max(1.0));
    }
}
