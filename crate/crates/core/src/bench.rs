//! Head-to-head comparison of the learned optimizer against
//! Levenberg-Marquardt on held-out curve instances.

use crate::classical::{solve_classical, ClassicalConfig, ClassicalMethod};
use crate::curves::{sample_instance, CurveFamily, CurveProblem, FamilyTag};
use crate::learned::solve::{learned_solve, DEFAULT_EPSILON};
use crate::learned::MetaModel;
use crate::linalg::DenseVector;
use crate::problem::SolverTrace;
use crate::rng::RngState;
use crate::Result;

/// Benchmark instances come from this stream of the root seed, disjoint from
/// the training/validation streams.
pub const BENCH_STREAM: u64 = 3;

/// Default damping sweep for the LM baseline.
pub const LAMBDA_SWEEP: [f64; 3] = [1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub seed_index: u64,
    pub family: &'static str,
    pub iteration: usize,
    pub method: String,
    pub objective: f64,
    pub param_err_l1: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub n_instances: usize,
    pub iterations: usize,
    /// Median learned objective at iterations 1, 5, 10, 15.
    pub learned_medians: [f64; 4],
    /// Per lambda0: median LM objective at iterations 1, 5, 10, 15.
    pub lm_medians: Vec<(f64, [f64; 4])>,
    /// Lambda0 whose median objective at iteration 5 is lowest.
    pub best_lambda_at5: f64,
    /// Fraction of instances where the learned final objective beats the
    /// best-lambda LM run.
    pub win_rate_at5_vs_best_lambda: f64,
    pub win_rate_final_vs_best_lambda: f64,
    /// Stricter score: beat the per-instance minimum across the whole sweep.
    pub win_rate_final_vs_per_instance_best: f64,
    /// Supplementary: fraction of instances where the learned final iterate
    /// is closer to the ground-truth parameters (L1) than the best-lambda LM
    /// final iterate.
    pub win_rate_final_param_err: f64,
}

pub struct BenchmarkOutput {
    pub rows: Vec<BenchmarkRow>,
    pub summary: BenchmarkSummary,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn push_trace_rows(
    rows: &mut Vec<BenchmarkRow>,
    trace: &SolverTrace,
    truth: &DenseVector,
    seed_index: u64,
    family: &'static str,
    method: &str,
    iterations: usize,
) {
    for i in 0..=iterations {
        let x = trace.iterate_at(i);
        rows.push(BenchmarkRow {
            seed_index,
            family,
            iteration: i,
            method: method.to_string(),
            objective: trace.objective_at(i),
            param_err_l1: x.sub(truth).norm_l1(),
            wall_ms: if i < trace.wall_ms.len() {
                trace.wall_ms[i]
            } else {
                0.0
            },
        });
    }
}

/// Run the benchmark: for each held-out instance, the learned optimizer
/// (when a model is supplied) and one LM run per sweep value, all from the
/// same family-midpoint start.
pub fn run_benchmark(
    model: Option<&MetaModel>,
    n_test: usize,
    iterations: usize,
    root: &RngState,
) -> Result<BenchmarkOutput> {
    let mut rows = Vec::new();
    // objectives[k] = (learned trace objectives, per-lambda objectives)
    let mut learned_at: Vec<[f64; 4]> = Vec::with_capacity(n_test);
    let mut learned_final: Vec<f64> = Vec::with_capacity(n_test);
    let mut learned_param_err: Vec<f64> = Vec::with_capacity(n_test);
    let mut lm_at: Vec<Vec<[f64; 4]>> = vec![Vec::with_capacity(n_test); LAMBDA_SWEEP.len()];
    let mut lm_at5: Vec<Vec<f64>> = vec![Vec::with_capacity(n_test); LAMBDA_SWEEP.len()];
    let mut lm_final: Vec<Vec<f64>> = vec![Vec::with_capacity(n_test); LAMBDA_SWEEP.len()];
    let mut lm_param_err: Vec<Vec<f64>> = vec![Vec::with_capacity(n_test); LAMBDA_SWEEP.len()];
    let checkpoints = [1usize, 5, 10, 15];

    for k in 0..n_test {
        let mut rng = root.derive(BENCH_STREAM).derive(k as u64);
        let tag = FamilyTag::ALL[rng.below(4) as usize];
        let family = CurveFamily::standard(tag);
        let instance = sample_instance(&family, &mut rng);
        let truth = DenseVector::from_vec(vec![instance.truth.0, instance.truth.1]);
        let problem = CurveProblem::new(instance);
        let x0 = problem.initial_guess();

        if let Some(model) = model {
            let learned_trace = learned_solve(&problem, model, &x0, iterations, DEFAULT_EPSILON)?;
            push_trace_rows(
                &mut rows,
                &learned_trace,
                &truth,
                k as u64,
                tag.as_str(),
                "lsnet",
                iterations,
            );
            learned_at.push(checkpoints.map(|i| learned_trace.objective_at(i)));
            learned_final.push(learned_trace.objective_at(iterations));
            learned_param_err.push(learned_trace.iterate_at(iterations).sub(&truth).norm_l1());
        }

        for (li, &lambda0) in LAMBDA_SWEEP.iter().enumerate() {
            let config = ClassicalConfig {
                max_iterations: iterations,
                lambda0,
                ..ClassicalConfig::default()
            };
            let trace = solve_classical(
                &problem,
                &x0,
                &config,
                ClassicalMethod::LevenbergMarquardt,
            )?;
            let method = format!("lm_{lambda0:e}");
            push_trace_rows(
                &mut rows,
                &trace,
                &truth,
                k as u64,
                tag.as_str(),
                &method,
                iterations,
            );
            lm_at[li].push(checkpoints.map(|i| trace.objective_at(i)));
            lm_at5[li].push(trace.objective_at(5));
            lm_final[li].push(trace.objective_at(iterations));
            lm_param_err[li].push(trace.iterate_at(iterations).sub(&truth).norm_l1());
        }
    }

    let learned_medians = if !learned_at.is_empty() {
        let mut out = [0.0; 4];
        for (c, o) in out.iter_mut().enumerate() {
            let mut vals: Vec<f64> = learned_at.iter().map(|a| a[c]).collect();
            *o = median(&mut vals);
        }
        out
    } else {
        [f64::NAN; 4]
    };
    let mut lm_medians = Vec::new();
    for (li, &lambda0) in LAMBDA_SWEEP.iter().enumerate() {
        let mut out = [0.0; 4];
        for (c, o) in out.iter_mut().enumerate() {
            let mut vals: Vec<f64> = lm_at[li].iter().map(|a| a[c]).collect();
            *o = median(&mut vals);
        }
        lm_medians.push((lambda0, out));
    }
    // Best lambda by median objective at iteration 5.
    let best_li = (0..LAMBDA_SWEEP.len())
        .min_by(|&a, &b| {
            lm_medians[a].1[1]
                .partial_cmp(&lm_medians[b].1[1])
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    let mut wins5 = 0usize;
    let mut wins_final = 0usize;
    let mut wins_final_strict = 0usize;
    let mut wins_param = 0usize;
    for k in 0..learned_at.len() {
        if learned_at[k][1] < lm_at5[best_li][k] {
            wins5 += 1;
        }
        if learned_final[k] < lm_final[best_li][k] {
            wins_final += 1;
        }
        let per_instance_best = (0..LAMBDA_SWEEP.len())
            .map(|li| lm_final[li][k])
            .fold(f64::INFINITY, f64::min);
        if learned_final[k] < per_instance_best {
            wins_final_strict += 1;
        }
        if learned_param_err[k] < lm_param_err[best_li][k] {
            wins_param += 1;
        }
    }
    let denom = n_test.max(1) as f64;
    let summary = BenchmarkSummary {
        n_instances: n_test,
        iterations,
        learned_medians,
        lm_medians,
        best_lambda_at5: LAMBDA_SWEEP[best_li],
        win_rate_at5_vs_best_lambda: wins5 as f64 / denom,
        win_rate_final_vs_best_lambda: wins_final as f64 / denom,
        win_rate_final_vs_per_instance_best: wins_final_strict as f64 / denom,
        win_rate_final_param_err: wins_param as f64 / denom,
    };
    Ok(BenchmarkOutput { rows, summary })
}

pub fn rows_to_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("seed,family,iteration,method,objective,param_err_l1,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed_index, r.family, r.iteration, r.method, r.objective, r.param_err_l1, r.wall_ms
        ));
    }
    out
}

/// CSV with timing columns stripped; the reproducibility checks compare this
/// form because wall-clock values differ between runs.
pub fn rows_to_csv_detimed(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("seed,family,iteration,method,objective,param_err_l1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed_index, r.family, r.iteration, r.method, r.objective, r.param_err_l1
        ));
    }
    out
}

impl BenchmarkSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "benchmark: {} instances, {} iterations\n",
            self.n_instances, self.iterations
        ));
        out.push_str("median objective by iteration (1 / 5 / 10 / 15):\n");
        out.push_str(&format!(
            "  lsnet        {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}\n",
            self.learned_medians[0],
            self.learned_medians[1],
            self.learned_medians[2],
            self.learned_medians[3]
        ));
        for (lambda, med) in &self.lm_medians {
            out.push_str(&format!(
                "  lm λ0={lambda:<8.0e} {:>10.5e} {:>12.5e} {:>12.5e} {:>12.5e}\n",
                med[0], med[1], med[2], med[3]
            ));
        }
        out.push_str(&format!(
            "best λ0 at iteration 5: {:e}\n",
            self.best_lambda_at5
        ));
        out.push_str(&format!(
            "win rates vs best-λ0 LM: {:.1}% at iteration 5, {:.1}% at final\n",
            100.0 * self.win_rate_at5_vs_best_lambda,
            100.0 * self.win_rate_final_vs_best_lambda
        ));
        out.push_str(&format!(
            "win rate vs per-instance best LM: {:.1}% at final\n",
            100.0 * self.win_rate_final_vs_per_instance_best
        ));
        out.push_str(&format!(
            "parameter-error win rate vs best-λ0 LM: {:.1}% at final\n",
            100.0 * self.win_rate_final_param_err
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_benchmark_has_header_only() {
        let mut rng = RngState::new(1);
        let model = MetaModel::dense(2, 4, 1, &mut rng);
        let out = run_benchmark(Some(&model), 0, 15, &RngState::new(5)).unwrap();
        assert!(out.rows.is_empty());
        let csv = rows_to_csv(&out.rows);
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn inert_model_rows_stay_at_initial_objective() {
        // Zero output projection: the learned objective column is constant.
        let mut rng = RngState::new(2);
        let model = MetaModel::dense(2, 4, 1, &mut rng);
        let out = run_benchmark(Some(&model), 3, 15, &RngState::new(6)).unwrap();
        for k in 0..3 {
            let learned: Vec<&BenchmarkRow> = out
                .rows
                .iter()
                .filter(|r| r.seed_index == k && r.method == "lsnet")
                .collect();
            assert_eq!(learned.len(), 16);
            let first = learned[0].objective;
            for row in learned {
                assert_eq!(row.objective, first);
            }
        }
    }

    #[test]
    fn benchmark_is_reproducible_bitwise() {
        let mut rng = RngState::new(3);
        let model = MetaModel::dense(2, 4, 1, &mut rng);
        let a = run_benchmark(Some(&model), 4, 15, &RngState::new(7)).unwrap();
        let b = run_benchmark(Some(&model), 4, 15, &RngState::new(7)).unwrap();
        assert_eq!(rows_to_csv_detimed(&a.rows), rows_to_csv_detimed(&b.rows));
    }
}
