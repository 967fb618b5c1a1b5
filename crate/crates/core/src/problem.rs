//! The least-squares problem abstraction and iterate bookkeeping shared by
//! the classical and learned solvers.

use crate::linalg::{finite_diff_jacobian, DenseMatrix, DenseVector, DEFAULT_FD_STEP};
use crate::{Error, Result};

/// A residual function with an analytic Jacobian. Implementations must be
/// deterministic; both solver families rely on that for reproducibility.
pub trait LeastSquaresProblem {
    fn dim_x(&self) -> usize;
    fn dim_r(&self) -> usize;
    fn residuals(&self, x: &DenseVector) -> Result<DenseVector>;
    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix>;

    /// Ground-truth parameters for synthetic instances.
    fn ground_truth(&self) -> Option<&DenseVector> {
        None
    }

    /// Family tag used in reports and benchmark CSVs.
    fn family(&self) -> &str {
        "unknown"
    }

    /// Residual rows that finite-difference validation should skip (e.g.
    /// pixels near interpolation kinks). `None` means validate every row.
    fn fd_validation_mask(&self, _x: &DenseVector) -> Option<Vec<bool>> {
        None
    }

    /// Project an iterate back into the evaluable domain (e.g. keep a scale
    /// parameter positive). Default: no constraint.
    fn clamp_iterate(&self, _x: &mut DenseVector) {}
}

/// ½‖r(x)‖².
pub fn objective(problem: &dyn LeastSquaresProblem, x: &DenseVector) -> Result<f64> {
    if x.len() != problem.dim_x() {
        return Err(Error::DimensionMismatch {
            context: "objective parameter",
            expected: problem.dim_x(),
            got: x.len(),
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFiniteEvaluation("objective parameter"));
    }
    let r = problem.residuals(x)?;
    if !r.is_finite() {
        return Err(Error::NonFiniteEvaluation("objective residual"));
    }
    Ok(0.5 * r.dot(&r))
}

/// Why a solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    StepTolerance,
    Diverged,
    SolveFailed,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxIterations => "max_iterations",
            Termination::StepTolerance => "step_tolerance",
            Termination::Diverged => "diverged",
            Termination::SolveFailed => "solve_failed",
        }
    }
}

/// Full iterate history of one solve: parameters, objectives, step norms and
/// per-iteration wall time.
#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub iterates: Vec<DenseVector>,
    pub objectives: Vec<f64>,
    /// ‖Δx‖ of the step that produced iterate i (empty slot 0 has no step).
    pub step_norms: Vec<f64>,
    /// Wall time spent producing iterate i, in milliseconds (0 for iterate 0).
    pub wall_ms: Vec<f64>,
    pub termination: Termination,
}

impl SolverTrace {
    pub fn start(x0: DenseVector, objective0: f64) -> Self {
        SolverTrace {
            iterates: vec![x0],
            objectives: vec![objective0],
            step_norms: vec![0.0],
            wall_ms: vec![0.0],
            termination: Termination::MaxIterations,
        }
    }

    pub fn push(&mut self, x: DenseVector, objective: f64, step_norm: f64, wall_ms: f64) {
        self.iterates.push(x);
        self.objectives.push(objective);
        self.step_norms.push(step_norm);
        self.wall_ms.push(wall_ms);
    }

    pub fn last_iterate(&self) -> &DenseVector {
        self.iterates.last().expect("trace never empty")
    }

    pub fn last_objective(&self) -> f64 {
        *self.objectives.last().expect("trace never empty")
    }

    /// Index of the final iterate.
    pub fn final_iteration(&self) -> usize {
        self.iterates.len() - 1
    }

    /// Objective at iteration `i`, holding the final value once terminated.
    pub fn objective_at(&self, i: usize) -> f64 {
        self.objectives[i.min(self.objectives.len() - 1)]
    }

    /// Parameter iterate at iteration `i`, holding the final one once terminated.
    pub fn iterate_at(&self, i: usize) -> &DenseVector {
        &self.iterates[i.min(self.iterates.len() - 1)]
    }

    /// CSV with columns iteration, objective, step_norm, wall_ms, x0.., xn.
    pub fn to_csv(&self) -> String {
        let dim = self.iterates.first().map_or(0, |x| x.len());
        let mut out = String::from("iteration,objective,step_norm,wall_ms");
        for k in 0..dim {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        for (i, x) in self.iterates.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}",
                i, self.objectives[i], self.step_norms[i], self.wall_ms[i]
            ));
            for v in x.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Check that every stored objective is exactly recomputable from its
    /// iterate. Returns the first mismatching iteration if any.
    pub fn verify_objectives(&self, problem: &dyn LeastSquaresProblem) -> Result<Option<usize>> {
        for (i, x) in self.iterates.iter().enumerate() {
            let e = objective(problem, x)?;
            if e != self.objectives[i] {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }
}

/// Result of comparing an analytic Jacobian against central finite
/// differences. Discrepancies are normalized by the largest finite-difference
/// entry so the score is scale free.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub max_rel: f64,
    pub worst_row: usize,
    pub worst_col: usize,
    pub flagged: usize,
    pub checked: usize,
    pub tol: f64,
}

impl JacobianReport {
    pub fn passed(&self) -> bool {
        self.flagged == 0
    }
}

/// Compare the analytic Jacobian with [`finite_diff_jacobian`] at `x`.
/// Rows excluded by the problem's validation mask are skipped.
pub fn validate_jacobian(
    problem: &dyn LeastSquaresProblem,
    x: &DenseVector,
    tol: f64,
) -> Result<JacobianReport> {
    let analytic = problem.jacobian(x)?;
    if !analytic.is_finite() {
        return Err(Error::NonFiniteEvaluation("analytic jacobian"));
    }
    let fd = finite_diff_jacobian(|p| problem.residuals(p), x, DEFAULT_FD_STEP)?;
    if analytic.rows() != fd.rows() || analytic.cols() != fd.cols() {
        return Err(Error::ShapeMismatch {
            context: "validate_jacobian",
            expected: format!("{}x{}", fd.rows(), fd.cols()),
            got: format!("{}x{}", analytic.rows(), analytic.cols()),
        });
    }
    let mask = problem.fd_validation_mask(x);
    let scale = fd.max_abs().max(analytic.max_abs()).max(1e-12);
    let mut report = JacobianReport {
        max_rel: 0.0,
        worst_row: 0,
        worst_col: 0,
        flagged: 0,
        checked: 0,
        tol,
    };
    for i in 0..fd.rows() {
        if let Some(m) = &mask {
            if !m[i] {
                continue;
            }
        }
        for j in 0..fd.cols() {
            let rel = (analytic.get(i, j) - fd.get(i, j)).abs() / scale;
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst_row = i;
                report.worst_col = j;
            }
            if rel > tol {
                report.flagged += 1;
            }
        }
    }
    Ok(report)
}

/// A linear residual r(x) = Ax - b; used by tests and the training smoke path.
pub struct LinearProblem {
    pub a: DenseMatrix,
    pub b: DenseVector,
    truth: Option<DenseVector>,
}

impl LinearProblem {
    pub fn new(a: DenseMatrix, b: DenseVector) -> Self {
        assert_eq!(a.rows(), b.len());
        LinearProblem { a, b, truth: None }
    }

    pub fn with_truth(mut self, truth: DenseVector) -> Self {
        self.truth = Some(truth);
        self
    }
}

impl LeastSquaresProblem for LinearProblem {
    fn dim_x(&self) -> usize {
        self.a.cols()
    }

    fn dim_r(&self) -> usize {
        self.a.rows()
    }

    fn residuals(&self, x: &DenseVector) -> Result<DenseVector> {
        Ok(self.a.matvec(x).sub(&self.b))
    }

    fn jacobian(&self, _x: &DenseVector) -> Result<DenseMatrix> {
        Ok(self.a.clone())
    }

    fn ground_truth(&self) -> Option<&DenseVector> {
        self.truth.as_ref()
    }

    fn family(&self) -> &str {
        "linear"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    struct ZeroProblem;
    impl LeastSquaresProblem for ZeroProblem {
        fn dim_x(&self) -> usize {
            2
        }
        fn dim_r(&self) -> usize {
            3
        }
        fn residuals(&self, _x: &DenseVector) -> Result<DenseVector> {
            Ok(DenseVector::zeros(3))
        }
        fn jacobian(&self, _x: &DenseVector) -> Result<DenseMatrix> {
            Ok(DenseMatrix::zeros(3, 2))
        }
    }

    struct FixedResidual(Vec<f64>);
    impl LeastSquaresProblem for FixedResidual {
        fn dim_x(&self) -> usize {
            1
        }
        fn dim_r(&self) -> usize {
            self.0.len()
        }
        fn residuals(&self, _x: &DenseVector) -> Result<DenseVector> {
            Ok(DenseVector::from_vec(self.0.clone()))
        }
        fn jacobian(&self, _x: &DenseVector) -> Result<DenseMatrix> {
            Ok(DenseMatrix::zeros(self.0.len(), 1))
        }
    }

    #[test]
    fn zero_residual_zero_objective() {
        let e = objective(&ZeroProblem, &DenseVector::zeros(2)).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn three_four_gives_twelve_point_five() {
        let p = FixedResidual(vec![3.0, 4.0]);
        let e = objective(&p, &DenseVector::zeros(1)).unwrap();
        assert_eq!(e, 12.5);
    }

    #[test]
    fn objective_is_permutation_invariant() {
        let p1 = FixedResidual(vec![1.0, -2.0, 0.5, 3.0]);
        let p2 = FixedResidual(vec![3.0, 0.5, 1.0, -2.0]);
        let x = DenseVector::zeros(1);
        assert_eq!(objective(&p1, &x).unwrap(), objective(&p2, &x).unwrap());
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let x = DenseVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(
            objective(&ZeroProblem, &x),
            Err(Error::NonFiniteEvaluation(_))
        ));
    }

    #[test]
    fn linear_jacobian_validates_exactly() {
        let mut rng = RngState::new(17);
        let a = DenseMatrix::from_fn(6, 3, |_, _| rng.uniform(-1.0, 1.0));
        let b = DenseVector::from_vec((0..6).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let p = LinearProblem::new(a, b);
        let x = DenseVector::from_vec(vec![0.2, -0.4, 0.9]);
        let report = validate_jacobian(&p, &x, 1e-9).unwrap();
        assert!(report.passed(), "max_rel={}", report.max_rel);
        assert!(report.max_rel <= 1e-9);
    }

    #[test]
    fn trace_round_trips_objectives() {
        let mut rng = RngState::new(23);
        let a = DenseMatrix::from_fn(5, 2, |_, _| rng.uniform(-1.0, 1.0));
        let b = DenseVector::from_vec((0..5).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let p = LinearProblem::new(a, b);
        let x0 = DenseVector::from_vec(vec![0.1, 0.1]);
        let e0 = objective(&p, &x0).unwrap();
        let mut trace = SolverTrace::start(x0, e0);
        let x1 = DenseVector::from_vec(vec![0.5, -0.3]);
        let e1 = objective(&p, &x1).unwrap();
        trace.push(x1, e1, 0.6, 0.0);
        assert_eq!(trace.verify_objectives(&p).unwrap(), None);
    }

    #[test]
    fn trace_csv_shape() {
        let x0 = DenseVector::from_vec(vec![1.0, 2.0]);
        let trace = SolverTrace::start(x0, 0.5);
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iteration,objective,step_norm,wall_ms,x0,x1");
        assert_eq!(lines.next().unwrap(), "0,0.5,0,0,1,2");
    }
}
