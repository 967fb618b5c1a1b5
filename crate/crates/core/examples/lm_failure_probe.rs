use nlsq_core::classical::{solve_classical, ClassicalConfig, ClassicalMethod};
use nlsq_core::curves::{sample_instance, CurveFamily, CurveProblem, FamilyTag};
use nlsq_core::linalg::DenseVector;
use nlsq_core::rng::RngState;

fn main() {
    let root = RngState::new(99);
    for tag in FamilyTag::ALL {
        let family = CurveFamily::standard(tag);
        let mut fails = 0;
        let mut stuck_objs = Vec::new();
        let n = 200;
        for k in 0..n {
            let mut rng = root.derive(1000 + tag as u64).derive(k);
            let inst = sample_instance(&family, &mut rng);
            let truth = DenseVector::from_vec(vec![inst.truth.0, inst.truth.1]);
            let p = CurveProblem::new(inst);
            let x0 = p.initial_guess();
            let mut best = f64::INFINITY;
            for lambda0 in [1e-4, 1e-3, 1e-2] {
                let cfg = ClassicalConfig { max_iterations: 15, lambda0, ..ClassicalConfig::default() };
                let t = solve_classical(&p, &x0, &cfg, ClassicalMethod::LevenbergMarquardt).unwrap();
                best = best.min(t.last_objective());
            }
            // Oracle: LM from the ground truth reaches the global basin.
            let cfg = ClassicalConfig { max_iterations: 30, lambda0: 1e-4, ..ClassicalConfig::default() };
            let oracle = solve_classical(&p, &truth, &cfg, ClassicalMethod::LevenbergMarquardt).unwrap();
            let opt = oracle.last_objective();
            if best > opt + 1e-3 {
                fails += 1;
                stuck_objs.push(best - opt);
            }
        }
        stuck_objs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = stuck_objs.get(stuck_objs.len() / 2).cloned().unwrap_or(0.0);
        println!("{:10}: LM fails {:3}/{} ({}%), median excess {:.3}", format!("{:?}", tag), fails, n, fails * 100 / n, med);
    }
}
