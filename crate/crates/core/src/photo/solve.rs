//! Joint depth + pose optimization over the photometric objective.
//!
//! The classical path assembles the damped normal equations from the
//! structured Jacobian blocks into packed lower-triangular form and solves
//! them densely; its per-iteration cost therefore grows superlinearly with
//! pixel count, which is exactly the behavior the learned optimizer's linear
//! per-iteration cost is compared against.

use super::camera::Z_MIN;
use super::residual::{
    photometric_jacobian, photometric_residuals, InverseDepthMap, NormalBlocks, StereoInstance,
};
use super::se3::Se3Pose;
use crate::classical::{ClassicalConfig, LmSchedule, DIVERGENCE_FACTOR, ZERO_DIAG_DAMPING};
use crate::learned::solve::learned_solve_stereo;
use crate::learned::MetaModel;
use crate::linalg::{DenseVector, PackedCholesky};
use crate::problem::{SolverTrace, Termination};
use crate::{Error, Result};
use std::time::Instant;

pub enum StereoMethod<'a> {
    GaussNewton(&'a ClassicalConfig),
    LevenbergMarquardt(&'a ClassicalConfig),
    Learned {
        model: &'a MetaModel,
        max_iterations: usize,
        epsilon: f64,
    },
}

pub struct StereoSolution {
    pub z: InverseDepthMap,
    pub pose: Se3Pose,
    pub trace: SolverTrace,
}

fn photometric_energy(instance: &StereoInstance, z: &InverseDepthMap, pose: &Se3Pose) -> f64 {
    let (r, _) = photometric_residuals(instance, z, pose);
    0.5 * r.dot(&r)
}

/// Root-mean-square photometric residual over currently valid pixels.
pub fn photometric_rmse(instance: &StereoInstance, z: &InverseDepthMap, pose: &Se3Pose) -> f64 {
    let (r, mask) = photometric_residuals(instance, z, pose);
    let valid = mask.iter().filter(|m| **m).count().max(1);
    let ss: f64 = r.as_slice().iter().map(|v| v * v).sum();
    (ss / valid as f64).sqrt()
}

fn apply_step(
    instance: &StereoInstance,
    z: &InverseDepthMap,
    pose: &Se3Pose,
    step: &DenseVector,
) -> (InverseDepthMap, Se3Pose) {
    let n = instance.pixels();
    let mut z_new = z.clone();
    for (i, zv) in z_new.z.iter_mut().enumerate() {
        *zv = (*zv + step[i]).max(Z_MIN);
    }
    let s = step.as_slice();
    let pose_new = Se3Pose::new(
        [
            pose.t[0] + s[n],
            pose.t[1] + s[n + 1],
            pose.t[2] + s[n + 2],
        ],
        [
            pose.alpha[0] + s[n + 3],
            pose.alpha[1] + s[n + 4],
            pose.alpha[2] + s[n + 5],
        ],
    );
    (z_new, pose_new)
}

/// Solve the joint (inverse depth, pose) problem from `init` (defaulting to
/// constant inverse depth at the mean scene depth and zero pose).
pub fn solve_stereo(
    instance: &StereoInstance,
    method: StereoMethod,
    init: Option<(InverseDepthMap, Se3Pose)>,
) -> Result<StereoSolution> {
    let (z0, pose0) = init.unwrap_or_else(|| instance.default_init());
    if z0.z.len() != instance.pixels() {
        return Err(Error::DimensionMismatch {
            context: "solve_stereo z0",
            expected: instance.pixels(),
            got: z0.z.len(),
        });
    }
    match method {
        StereoMethod::Learned {
            model,
            max_iterations,
            epsilon,
        } => learned_solve_stereo(instance, model, z0, pose0, max_iterations, epsilon),
        StereoMethod::GaussNewton(config) => {
            solve_stereo_classical(instance, z0, pose0, config, false)
        }
        StereoMethod::LevenbergMarquardt(config) => {
            solve_stereo_classical(instance, z0, pose0, config, true)
        }
    }
}

fn solve_stereo_classical(
    instance: &StereoInstance,
    z0: InverseDepthMap,
    pose0: Se3Pose,
    config: &ClassicalConfig,
    damped: bool,
) -> Result<StereoSolution> {
    config.validate()?;
    let mut z = z0;
    let mut pose = pose0;
    let mut energy = photometric_energy(instance, &z, &pose);
    let mut trace = SolverTrace::start(instance.pack(&z, &pose), energy);
    let e0 = energy;
    let mut schedule = LmSchedule::new(config);
    let mut packed: Vec<f64> = Vec::new();

    'outer: for _ in 1..=config.max_iterations {
        let tick = Instant::now();
        // An exactly zero objective is the global minimum (e.g. started at
        // the optimum of a noiseless instance): nothing left to solve.
        if energy == 0.0 {
            trace.termination = Termination::StepTolerance;
            break 'outer;
        }
        let (r, _) = photometric_residuals(instance, &z, &pose);
        let sj = photometric_jacobian(instance, &z, &pose);
        let blocks = NormalBlocks::build(&sj, &r);
        let rhs = blocks.neg_jtr();

        if damped {
            let mut accepted = None;
            for _ in 0..=config.max_retries {
                let max_diag = blocks.fill_packed_damped(schedule.lambda, ZERO_DIAG_DAMPING, &mut packed);
                let factor =
                    match PackedCholesky::factor(std::mem::take(&mut packed), instance.pixels() + 6, max_diag)
                    {
                        Ok(f) => f,
                        Err(Error::NotPositiveDefinite { .. }) => {
                            schedule.reject();
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                let step = factor.solve(&rhs)?;
                let (z_new, pose_new) = apply_step(instance, &z, &pose, &step);
                let e_new = photometric_energy(instance, &z_new, &pose_new);
                if e_new.is_finite() && e_new <= energy {
                    schedule.accept();
                    accepted = Some((step, z_new, pose_new, e_new));
                    break;
                }
                schedule.reject();
            }
            match accepted {
                Some((step, z_new, pose_new, e_new)) => {
                    let norm = step.norm();
                    if norm < config.step_tolerance {
                        trace.termination = Termination::StepTolerance;
                        break 'outer;
                    }
                    z = z_new;
                    pose = pose_new;
                    energy = e_new;
                    trace.push(
                        instance.pack(&z, &pose),
                        energy,
                        norm,
                        tick.elapsed().as_secs_f64() * 1e3,
                    );
                    if energy > DIVERGENCE_FACTOR * e0.max(f64::MIN_POSITIVE) {
                        trace.termination = Termination::Diverged;
                        break 'outer;
                    }
                }
                None => {
                    trace.termination = Termination::SolveFailed;
                    break 'outer;
                }
            }
        } else {
            // Gauss-Newton: undamped normal equations; rank deficiency is
            // reported, not papered over.
            let max_diag = blocks.fill_packed_damped(0.0, 0.0, &mut packed);
            let factor = match PackedCholesky::factor(
                std::mem::take(&mut packed),
                instance.pixels() + 6,
                max_diag,
            ) {
                Ok(f) => f,
                Err(Error::NotPositiveDefinite { .. }) => {
                    trace.termination = Termination::SolveFailed;
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            let step = factor.solve(&rhs)?;
            let norm = step.norm();
            if norm < config.step_tolerance {
                trace.termination = Termination::StepTolerance;
                break 'outer;
            }
            let (z_new, pose_new) = apply_step(instance, &z, &pose, &step);
            let e_new = photometric_energy(instance, &z_new, &pose_new);
            z = z_new;
            pose = pose_new;
            energy = e_new;
            trace.push(
                instance.pack(&z, &pose),
                energy,
                norm,
                tick.elapsed().as_secs_f64() * 1e3,
            );
            if !energy.is_finite() || energy > DIVERGENCE_FACTOR * e0.max(f64::MIN_POSITIVE) {
                trace.termination = Termination::Diverged;
                break 'outer;
            }
        }
    }
    Ok(StereoSolution { z, pose, trace })
}

/// Time a single damped normal-equation iteration (residual + Jacobian +
/// assembly + factorization + solve) at the current state. Used by the
/// scaling study.
pub fn time_classical_iteration(instance: &StereoInstance) -> Result<f64> {
    let (z, pose) = instance.default_init();
    let tick = Instant::now();
    let (r, _) = photometric_residuals(instance, &z, &pose);
    let sj = photometric_jacobian(instance, &z, &pose);
    let blocks = NormalBlocks::build(&sj, &r);
    let rhs = blocks.neg_jtr();
    let mut packed = Vec::new();
    let max_diag = blocks.fill_packed_damped(1e-3, ZERO_DIAG_DAMPING, &mut packed);
    let factor = PackedCholesky::factor(packed, instance.pixels() + 6, max_diag)?;
    let step = factor.solve(&rhs)?;
    std::hint::black_box(step.norm());
    Ok(tick.elapsed().as_secs_f64() * 1e3)
}
