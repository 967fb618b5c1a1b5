//! Reference Gauss-Newton and Levenberg-Marquardt solvers.
//!
//! These are the baselines the learned optimizer is compared against, and
//! they double as correctness oracles: GN solves linear problems in one step,
//! and the LM accept/reject loop guarantees a monotone objective sequence.

use crate::linalg::{cholesky_solve, DenseMatrix, DenseVector};
use crate::problem::{objective, LeastSquaresProblem, SolverTrace, Termination};
use crate::{Error, Result};
use std::time::Instant;

/// Substitute damping factor for zero diagonal entries of JᵀJ (pixels with
/// no image gradient); keeps the damped system positive definite in the
/// under-determined photometric case. Scaled by the largest positive
/// diagonal entry so the substitute stays above the Cholesky pivot threshold
/// regardless of problem size (falls back to the bare value when the whole
/// diagonal is zero).
pub const ZERO_DIAG_DAMPING: f64 = 1e-6;

/// Objective blow-up factor that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalMethod {
    GaussNewton,
    LevenbergMarquardt,
}

#[derive(Debug, Clone)]
pub struct ClassicalConfig {
    pub max_iterations: usize,
    /// Step tolerance: stop once ‖Δx‖ falls below this.
    pub step_tolerance: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_retries: usize,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            // Matched to the learned optimizer's unroll length for fair
            // comparisons.
            max_iterations: 15,
            step_tolerance: 1e-8,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_retries: 10,
        }
    }
}

impl ClassicalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_tolerance <= 0.0 || self.lambda0 <= 0.0 {
            return Err(Error::InvalidConfig(
                "step tolerance and lambda0 must be positive".into(),
            ));
        }
        if self.lambda_up <= 1.0 || self.lambda_down <= 1.0 {
            return Err(Error::InvalidConfig(
                "lambda factors must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// Solve JᵀJ Δx = -Jᵀr.
pub fn gauss_newton_step(j: &DenseMatrix, r: &DenseVector) -> Result<DenseVector> {
    if j.rows() != r.len() {
        return Err(Error::DimensionMismatch {
            context: "gauss_newton_step residual",
            expected: j.rows(),
            got: r.len(),
        });
    }
    let jtj = j.ata();
    let mut rhs = j.atb(r);
    for v in rhs.as_mut_slice() {
        *v = -*v;
    }
    cholesky_solve(&jtj, &rhs)
}

/// Damped step: solve (JᵀJ + λ·diag(JᵀJ)) Δx = -Jᵀr. Zero diagonal entries
/// are substituted with [`ZERO_DIAG_DAMPING`] before scaling by λ.
pub fn lm_step(j: &DenseMatrix, r: &DenseVector, lambda: f64) -> Result<DenseVector> {
    if j.rows() != r.len() {
        return Err(Error::DimensionMismatch {
            context: "lm_step residual",
            expected: j.rows(),
            got: r.len(),
        });
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be >= 0".into()));
    }
    let mut jtj = j.ata();
    let n = jtj.rows();
    let mut scale = 0.0_f64;
    for i in 0..n {
        scale = scale.max(jtj.get(i, i));
    }
    let zero_damp = ZERO_DIAG_DAMPING * scale.max(1.0);
    for i in 0..n {
        let d = jtj.get(i, i);
        let damp = if d > 0.0 { d } else { zero_damp };
        jtj.set(i, i, d + lambda * damp);
    }
    let mut rhs = j.atb(r);
    for v in rhs.as_mut_slice() {
        *v = -*v;
    }
    cholesky_solve(&jtj, &rhs)
}

/// Multiplicative damping schedule shared by the generic and photometric LM
/// loops: reject multiplies λ up, accept divides it down.
#[derive(Debug, Clone)]
pub struct LmSchedule {
    pub lambda: f64,
    up: f64,
    down: f64,
}

impl LmSchedule {
    pub fn new(config: &ClassicalConfig) -> Self {
        LmSchedule {
            lambda: config.lambda0,
            up: config.lambda_up,
            down: config.lambda_down,
        }
    }

    pub fn accept(&mut self) {
        self.lambda /= self.down;
    }

    pub fn reject(&mut self) {
        self.lambda *= self.up;
    }
}

/// Run Gauss-Newton or Levenberg-Marquardt from `x0`.
///
/// The LM variant only ever records accepted iterates, so its objective
/// sequence is non-increasing by construction. Solver failures (rank-deficient
/// JᵀJ under GN, retry exhaustion under LM) are recorded in the trace
/// termination rather than raised.
pub fn solve_classical(
    problem: &dyn LeastSquaresProblem,
    x0: &DenseVector,
    config: &ClassicalConfig,
    method: ClassicalMethod,
) -> Result<SolverTrace> {
    config.validate()?;
    if x0.len() != problem.dim_x() {
        return Err(Error::DimensionMismatch {
            context: "solve_classical x0",
            expected: problem.dim_x(),
            got: x0.len(),
        });
    }
    let e0 = objective(problem, x0)?;
    let mut trace = SolverTrace::start(x0.clone(), e0);
    let mut x = x0.clone();
    let mut energy = e0;
    let mut schedule = LmSchedule::new(config);

    for _ in 1..=config.max_iterations {
        let tick = Instant::now();
        // An exactly zero objective is the global minimum.
        if energy == 0.0 {
            trace.termination = Termination::StepTolerance;
            return Ok(trace);
        }
        let j = problem.jacobian(&x)?;
        let r = problem.residuals(&x)?;
        if !j.is_finite() || !r.is_finite() {
            trace.termination = Termination::Diverged;
            return Ok(trace);
        }

        let step = match method {
            ClassicalMethod::GaussNewton => match gauss_newton_step(&j, &r) {
                Ok(s) => s,
                Err(Error::NotPositiveDefinite { .. }) => {
                    trace.termination = Termination::SolveFailed;
                    return Ok(trace);
                }
                Err(e) => return Err(e),
            },
            ClassicalMethod::LevenbergMarquardt => {
                let mut accepted = None;
                for _ in 0..=config.max_retries {
                    let candidate_step = match lm_step(&j, &r, schedule.lambda) {
                        Ok(s) => s,
                        Err(Error::NotPositiveDefinite { .. }) => {
                            schedule.reject();
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let mut candidate = x.add_scaled(1.0, &candidate_step);
                    problem.clamp_iterate(&mut candidate);
                    let e_new = match objective(problem, &candidate) {
                        Ok(e) => e,
                        Err(Error::NonFiniteEvaluation(_)) | Err(Error::DomainError(_)) => {
                            schedule.reject();
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    if e_new <= energy {
                        schedule.accept();
                        accepted = Some((candidate_step, candidate, e_new));
                        break;
                    }
                    schedule.reject();
                }
                match accepted {
                    Some((s, candidate, e_new)) => {
                        let norm = s.norm();
                        if norm < config.step_tolerance {
                            trace.termination = Termination::StepTolerance;
                            return Ok(trace);
                        }
                        x = candidate;
                        energy = e_new;
                        trace.push(x.clone(), energy, norm, tick.elapsed().as_secs_f64() * 1e3);
                        if energy > DIVERGENCE_FACTOR * e0.max(f64::MIN_POSITIVE) {
                            trace.termination = Termination::Diverged;
                            return Ok(trace);
                        }
                        continue;
                    }
                    None => {
                        trace.termination = Termination::SolveFailed;
                        return Ok(trace);
                    }
                }
            }
        };

        // Gauss-Newton path: apply unconditionally.
        let norm = step.norm();
        if norm < config.step_tolerance {
            trace.termination = Termination::StepTolerance;
            return Ok(trace);
        }
        x = x.add_scaled(1.0, &step);
        problem.clamp_iterate(&mut x);
        energy = match objective(problem, &x) {
            Ok(e) => e,
            Err(Error::NonFiniteEvaluation(_)) | Err(Error::DomainError(_)) => {
                trace.termination = Termination::Diverged;
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        trace.push(x.clone(), energy, norm, tick.elapsed().as_secs_f64() * 1e3);
        if !x.is_finite() || energy > DIVERGENCE_FACTOR * e0.max(f64::MIN_POSITIVE) {
            trace.termination = Termination::Diverged;
            return Ok(trace);
        }
    }
    trace.termination = Termination::MaxIterations;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::LinearProblem;
    use crate::rng::RngState;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngState) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn random_vector(len: usize, rng: &mut RngState) -> DenseVector {
        DenseVector::from_vec((0..len).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    /// Elimination-based normal equation solve, independent of the Cholesky
    /// path (copy of the oracle used in linalg tests).
    fn elimination_solve(a: &DenseMatrix, b: &DenseVector) -> DenseVector {
        let n = a.rows();
        let mut m = a.clone();
        let mut rhs = b.clone();
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m.get(r, col).abs() > m.get(piv, col).abs() {
                    piv = r;
                }
            }
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(piv, j));
                m.set(piv, j, tmp);
            }
            let tmp = rhs[col];
            rhs[col] = rhs[piv];
            rhs[piv] = tmp;
            let d = m.get(col, col);
            for r in col + 1..n {
                let f = m.get(r, col) / d;
                for j in col..n {
                    let v = m.get(r, j) - f * m.get(col, j);
                    m.set(r, j, v);
                }
                rhs[r] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = rhs[r];
            for j in r + 1..n {
                s -= m.get(r, j) * x[j];
            }
            x[r] = s / m.get(r, r);
        }
        DenseVector::from_vec(x)
    }

    #[test]
    fn gn_identity_jacobian() {
        let j = DenseMatrix::identity(2);
        let r = DenseVector::from_vec(vec![1.0, -2.0]);
        let dx = gauss_newton_step(&j, &r).unwrap();
        assert!((dx[0] + 1.0).abs() < 1e-12);
        assert!((dx[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gn_matches_elimination_oracle() {
        let mut rng = RngState::new(31);
        let j = random_matrix(20, 2, &mut rng);
        let r = random_vector(20, &mut rng);
        let dx = gauss_newton_step(&j, &r).unwrap();
        let jtj = j.ata();
        let mut rhs = j.atb(&r);
        for v in rhs.as_mut_slice() {
            *v = -*v;
        }
        let oracle = elimination_solve(&jtj, &rhs);
        for i in 0..2 {
            assert!((dx[i] - oracle[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lm_zero_lambda_equals_gn() {
        let mut rng = RngState::new(37);
        for _ in 0..20 {
            let j = random_matrix(12, 3, &mut rng);
            let r = random_vector(12, &mut rng);
            let gn = gauss_newton_step(&j, &r).unwrap();
            let lm = lm_step(&j, &r, 0.0).unwrap();
            for i in 0..3 {
                assert!((gn[i] - lm[i]).abs() < 1e-12, "{} vs {}", gn[i], lm[i]);
            }
        }
    }

    #[test]
    fn lm_heavy_damping_shrinks_step() {
        let j = DenseMatrix::identity(2);
        let r = DenseVector::from_vec(vec![1.0, 1.0]);
        let dx = lm_step(&j, &r, 1e8).unwrap();
        let expected = -1.0 / (1.0 + 1e8);
        assert!((dx[0] - expected).abs() < 1e-15);
        assert!(dx.norm() < 1e-7);
    }

    #[test]
    fn lm_unit_lambda_matches_oracle() {
        let mut rng = RngState::new(41);
        let j = random_matrix(15, 3, &mut rng);
        let r = random_vector(15, &mut rng);
        let dx = lm_step(&j, &r, 1.0).unwrap();
        let jtj = j.ata();
        let mut damped = jtj.clone();
        for i in 0..3 {
            damped.set(i, i, 2.0 * jtj.get(i, i));
        }
        let mut rhs = j.atb(&r);
        for v in rhs.as_mut_slice() {
            *v = -*v;
        }
        let oracle = elimination_solve(&damped, &rhs);
        for i in 0..3 {
            assert!((dx[i] - oracle[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lm_step_norm_shrinks_monotonically() {
        let mut rng = RngState::new(43);
        for _ in 0..50 {
            let j = random_matrix(10, 2, &mut rng);
            let r = random_vector(10, &mut rng);
            let lambdas = [0.0, 0.1, 1.0, 10.0, 100.0, 1e4];
            let mut prev = f64::INFINITY;
            for &l in &lambdas {
                let n = lm_step(&j, &r, l).unwrap().norm();
                assert!(
                    n <= prev * (1.0 + 1e-12),
                    "step norm grew from {prev} to {n} at lambda {l}"
                );
                prev = n;
            }
        }
    }

    #[test]
    fn gn_solves_linear_problem_in_one_step() {
        let mut rng = RngState::new(47);
        let a = random_matrix(9, 3, &mut rng);
        let b = random_vector(9, &mut rng);
        let p = LinearProblem::new(a.clone(), b.clone());
        let x0 = random_vector(3, &mut rng);
        let trace = solve_classical(&p, &x0, &ClassicalConfig::default(), ClassicalMethod::GaussNewton)
            .unwrap();
        assert_eq!(trace.iterates.len(), 2, "x0 and the optimum");
        assert_eq!(trace.final_iteration(), 1);
        assert_eq!(trace.termination, Termination::StepTolerance);
        // Optimum solves the normal equations.
        let opt = elimination_solve(&a.ata(), &a.atb(&b));
        for i in 0..3 {
            assert!((trace.last_iterate()[i] - opt[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lm_objective_sequence_non_increasing() {
        let mut rng = RngState::new(53);
        for _ in 0..10 {
            let a = random_matrix(8, 2, &mut rng);
            let b = random_vector(8, &mut rng);
            let p = LinearProblem::new(a, b);
            let x0 = random_vector(2, &mut rng);
            let trace = solve_classical(
                &p,
                &x0,
                &ClassicalConfig::default(),
                ClassicalMethod::LevenbergMarquardt,
            )
            .unwrap();
            for w in trace.objectives.windows(2) {
                assert!(w[1] <= w[0], "objective increased: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn gn_rank_deficient_records_solve_failed() {
        // Two identical columns make JᵀJ singular.
        let a = DenseMatrix::from_fn(6, 2, |i, _| (i as f64) + 1.0);
        let b = DenseVector::from_vec(vec![1.0; 6]);
        let p = LinearProblem::new(a, b);
        let x0 = DenseVector::zeros(2);
        let trace =
            solve_classical(&p, &x0, &ClassicalConfig::default(), ClassicalMethod::GaussNewton)
                .unwrap();
        assert_eq!(trace.termination, Termination::SolveFailed);
    }
}
