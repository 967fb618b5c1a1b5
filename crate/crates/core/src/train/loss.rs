//! The meta-loss: per-iteration L1 error against ground truth, summed over
//! every iterate the optimizer produced (the fixed initial point x₀ is
//! excluded because no trainable parameter influences it).

use crate::linalg::DenseVector;
use crate::photo::{InverseDepthMap, Se3Pose};
use crate::problem::SolverTrace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Curve problems: weight on the L1 parameter error.
    pub w_param: f64,
    /// Stereo: weight on the mean L1 inverse-depth error.
    pub w_depth: f64,
    /// Stereo: weight on the L1 rotation-vector + translation error.
    pub w_pose: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_param: 1.0,
            w_depth: 1.0,
            w_pose: 1.0,
        }
    }
}

pub enum GroundTruth<'a> {
    Params(&'a DenseVector),
    Stereo {
        z: &'a InverseDepthMap,
        pose: &'a Se3Pose,
    },
}

/// L1 subgradient with sign(0) = 0 so exact hits contribute no gradient.
#[inline]
pub fn l1_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of a single iterate (shared by [`meta_loss`] and the tape backward
/// pass).
pub fn iterate_loss(x: &DenseVector, truth: &GroundTruth, weights: &LossWeights) -> Result<f64> {
    match truth {
        GroundTruth::Params(t) => {
            if x.len() != t.len() {
                return Err(Error::DimensionMismatch {
                    context: "meta_loss parameters",
                    expected: t.len(),
                    got: x.len(),
                });
            }
            Ok(weights.w_param * x.sub(t).norm_l1())
        }
        GroundTruth::Stereo { z, pose } => {
            let n = z.z.len();
            if x.len() != n + 6 {
                return Err(Error::DimensionMismatch {
                    context: "meta_loss stereo parameters",
                    expected: n + 6,
                    got: x.len(),
                });
            }
            let xs = x.as_slice();
            let depth_l1: f64 = xs[..n]
                .iter()
                .zip(&z.z)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n as f64;
            let mut pose_l1 = 0.0;
            for k in 0..3 {
                pose_l1 += (xs[n + k] - pose.t[k]).abs();
                pose_l1 += (xs[n + 3 + k] - pose.alpha[k]).abs();
            }
            Ok(weights.w_depth * depth_l1 + weights.w_pose * pose_l1)
        }
    }
}

/// Gradient of [`iterate_loss`] with respect to the iterate.
pub fn iterate_loss_grad(
    x: &DenseVector,
    truth: &GroundTruth,
    weights: &LossWeights,
) -> DenseVector {
    match truth {
        GroundTruth::Params(t) => DenseVector::from_vec(
            x.as_slice()
                .iter()
                .zip(t.as_slice())
                .map(|(a, b)| weights.w_param * l1_sign(a - b))
                .collect(),
        ),
        GroundTruth::Stereo { z, pose } => {
            let n = z.z.len();
            let xs = x.as_slice();
            let mut g = Vec::with_capacity(n + 6);
            let scale = weights.w_depth / n as f64;
            for (a, b) in xs[..n].iter().zip(&z.z) {
                g.push(scale * l1_sign(a - b));
            }
            for k in 0..3 {
                g.push(weights.w_pose * l1_sign(xs[n + k] - pose.t[k]));
            }
            for k in 0..3 {
                g.push(weights.w_pose * l1_sign(xs[n + 3 + k] - pose.alpha[k]));
            }
            DenseVector::from_vec(g)
        }
    }
}

/// Meta-loss of a full trace: Σ over iterates x₁..x_N of the per-iterate
/// loss (x₀ comes from a fixed initializer and is excluded).
pub fn meta_loss(trace: &SolverTrace, truth: &GroundTruth, weights: &LossWeights) -> Result<f64> {
    if trace.iterates.is_empty() {
        return Err(Error::InvalidConfig("empty trace in meta_loss".into()));
    }
    let mut total = 0.0;
    for x in trace.iterates.iter().skip(1) {
        total += iterate_loss(x, truth, weights)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn trace_of(iterates: Vec<Vec<f64>>) -> SolverTrace {
        let mut it = iterates.into_iter();
        let x0 = DenseVector::from_vec(it.next().unwrap());
        let mut trace = SolverTrace::start(x0, 0.0);
        for x in it {
            trace.push(DenseVector::from_vec(x), 0.0, 0.0, 0.0);
        }
        trace
    }

    #[test]
    fn perfect_iterates_give_zero() {
        let truth = DenseVector::from_vec(vec![1.0, -2.0]);
        let trace = trace_of(vec![vec![0.0, 0.0], vec![1.0, -2.0], vec![1.0, -2.0]]);
        let loss = meta_loss(
            &trace,
            &GroundTruth::Params(&truth),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_iterate_l1_arithmetic() {
        let truth = DenseVector::from_vec(vec![0.0, 0.0]);
        let trace = trace_of(vec![vec![9.0, 9.0], vec![1.0, 2.0]]);
        let loss = meta_loss(
            &trace,
            &GroundTruth::Params(&truth),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(loss, 3.0);
    }

    #[test]
    fn x0_is_excluded() {
        let truth = DenseVector::from_vec(vec![0.0]);
        let trace = trace_of(vec![vec![100.0]]);
        let loss = meta_loss(
            &trace,
            &GroundTruth::Params(&truth),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn stereo_loss_matches_per_pixel_loop() {
        let mut rng = RngState::new(6);
        let (w, h) = (4, 3);
        let n = w * h;
        let z_truth = InverseDepthMap::from_vec(
            w,
            h,
            (0..n).map(|_| rng.uniform(0.2, 1.0)).collect(),
        );
        let pose_truth = Se3Pose::new([0.1, -0.2, 0.05], [0.01, 0.02, -0.03]);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 1.0)).collect();
        for _ in 0..6 {
            xs.push(rng.uniform(-0.5, 0.5));
        }
        let x = DenseVector::from_vec(xs.clone());
        let weights = LossWeights {
            w_param: 1.0,
            w_depth: 0.7,
            w_pose: 2.5,
        };
        let loss = iterate_loss(
            &x,
            &GroundTruth::Stereo {
                z: &z_truth,
                pose: &pose_truth,
            },
            &weights,
        )
        .unwrap();
        // Independent loop.
        let mut depth = 0.0;
        for p in 0..n {
            depth += (xs[p] - z_truth.z[p]).abs();
        }
        depth /= n as f64;
        let mut pose = 0.0;
        for k in 0..3 {
            pose += (xs[n + k] - pose_truth.t[k]).abs();
            pose += (xs[n + 3 + k] - pose_truth.alpha[k]).abs();
        }
        assert!((loss - (0.7 * depth + 2.5 * pose)).abs() < 1e-14);
    }

    #[test]
    fn doubling_weights_doubles_loss_and_grad() {
        let truth = DenseVector::from_vec(vec![0.3, -0.4]);
        let x = DenseVector::from_vec(vec![1.0, 1.0]);
        let w1 = LossWeights::default();
        let w2 = LossWeights {
            w_param: 2.0,
            w_depth: 2.0,
            w_pose: 2.0,
        };
        let t = GroundTruth::Params(&truth);
        assert_eq!(
            2.0 * iterate_loss(&x, &t, &w1).unwrap(),
            iterate_loss(&x, &t, &w2).unwrap()
        );
        let g1 = iterate_loss_grad(&x, &t, &w1);
        let g2 = iterate_loss_grad(&x, &t, &w2);
        for k in 0..2 {
            assert_eq!(2.0 * g1[k], g2[k]);
        }
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(l1_sign(0.0), 0.0);
        assert_eq!(l1_sign(-0.0), 0.0);
        assert_eq!(l1_sign(1e-300), 1.0);
        assert_eq!(l1_sign(-1e-300), -1.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let truth = DenseVector::from_vec(vec![0.0]);
        let trace = trace_of(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            meta_loss(
                &trace,
                &GroundTruth::Params(&truth),
                &LossWeights::default()
            ),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
