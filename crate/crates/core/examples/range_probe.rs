use nlsq_core::classical::{solve_classical, ClassicalConfig, ClassicalMethod};
use nlsq_core::curves::{sample_instance_with_sigma, CurveFamily, CurveProblem, FamilyTag};
use nlsq_core::linalg::DenseVector;
use nlsq_core::rng::RngState;

fn probe(family: &CurveFamily, label: &str) {
    let root = RngState::new(99);
    let n = 200;
    let mut fails = 0;
    let mut local_ok = 0;
    for k in 0..n {
        let mut rng = root.derive(31).derive(k);
        let inst = sample_instance_with_sigma(family, &mut rng, 0.1);
        let truth = DenseVector::from_vec(vec![inst.truth.0, inst.truth.1]);
        let p = CurveProblem::new(inst);
        let x0 = p.initial_guess();
        let mut best = f64::INFINITY;
        for lambda0 in [1e-4, 1e-3, 1e-2] {
            let cfg = ClassicalConfig { max_iterations: 15, lambda0, ..ClassicalConfig::default() };
            best = best.min(solve_classical(&p, &x0, &cfg, ClassicalMethod::LevenbergMarquardt).unwrap().last_objective());
        }
        let cfg = ClassicalConfig { max_iterations: 30, lambda0: 1e-4, ..ClassicalConfig::default() };
        let opt = solve_classical(&p, &truth, &cfg, ClassicalMethod::LevenbergMarquardt).unwrap().last_objective();
        if best > opt + 1e-3 { fails += 1; }

        // Well-posedness: noiseless, x0 within 10% of truth.
        let mut rng2 = root.derive(32).derive(k);
        let noiseless = sample_instance_with_sigma(family, &mut rng2, 0.0);
        let t2 = DenseVector::from_vec(vec![noiseless.truth.0, noiseless.truth.1]);
        let p2 = CurveProblem::new(noiseless);
        let mut rng3 = root.derive(33).derive(k);
        let x0b = DenseVector::from_vec(vec![
            t2[0] * (1.0 + rng3.uniform(-0.1, 0.1)),
            t2[1] * (1.0 + rng3.uniform(-0.1, 0.1)),
        ]);
        let cfg = ClassicalConfig { max_iterations: 50, lambda0: 1e-3, step_tolerance: 1e-12, ..ClassicalConfig::default() };
        let t = solve_classical(&p2, &x0b, &cfg, ClassicalMethod::LevenbergMarquardt).unwrap();
        let err = t.last_iterate().sub(&t2).norm_linf();
        if err < 1e-5 { local_ok += 1; }
    }
    println!("{label:28} LM-fail {:3}%  local-recovery {:3}%", fails * 100 / n, local_ok * 100 / n);
}

fn main() {
    use std::f64::consts::PI;
    for (lo, hi) in [(0.5, 3.0), (0.5, 4.5), (0.5, 6.0)] {
        let mut f = CurveFamily::standard(FamilyTag::Sine);
        f.a_range = (lo, hi);
        probe(&f, &format!("sine a in [{lo},{hi}]"));
        let mut f = CurveFamily::standard(FamilyTag::Sinc);
        f.a_range = (lo, hi);
        f.b_range = (-PI, PI);
        probe(&f, &format!("sinc a in [{lo},{hi}]"));
    }
    for (lo, hi) in [(0.3, 2.0), (0.12, 0.8), (0.1, 0.5)] {
        let mut f = CurveFamily::standard(FamilyTag::Gaussian);
        f.b_range = (lo, hi);
        probe(&f, &format!("gaussian b in [{lo},{hi}]"));
    }
    for (lo, hi) in [(-1.0, 0.5), (-1.5, 1.0)] {
        let mut f = CurveFamily::standard(FamilyTag::ExpSum);
        f.a_range = (lo, hi);
        f.b_range = (lo, hi);
        probe(&f, &format!("expsum ab in [{lo},{hi}]"));
    }
}
