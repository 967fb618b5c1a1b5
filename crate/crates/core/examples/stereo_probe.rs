use nlsq_core::classical::ClassicalConfig;
use nlsq_core::photo::*;
use nlsq_core::rng::RngState;

fn main() {
    let config = SceneConfig {
        width: 32, height: 24, kind: SceneKind::FrontoPlane,
        baseline_translation: 0.05, baseline_rotation_deg: 1.5,
        ..SceneConfig::default()
    };
    for seed in 1..=20u64 {
        let inst = match synth_scene(&mut RngState::new(seed), &config) { Ok(i) => i, Err(_) => continue };
        let (z0, p0) = inst.default_init();
        let rmse0 = photometric_rmse(&inst, &z0, &p0);
        let cfg = ClassicalConfig { max_iterations: 100, step_tolerance: 1e-10, ..ClassicalConfig::default() };
        let sol = solve_stereo(&inst, StereoMethod::LevenbergMarquardt(&cfg), None).unwrap();
        let rmse = photometric_rmse(&inst, &sol.z, &sol.pose);
        let rot = rotation_error(sol.pose.alpha, inst.truth_pose.alpha).to_degrees();
        let tdir = translation_direction_error(sol.pose.t, inst.truth_pose.t).to_degrees();
        let red = 100.0 * (1.0 - rmse / rmse0);
        let ok = red >= 50.0 && rot < 0.5 && tdir < 5.0;
        println!("seed {seed:2}: {} red {red:6.1}%  rot {rot:.4} deg  tdir {tdir:.3} deg  ({} iters, {:?})",
            if ok { "PASS" } else { "fail" }, sol.trace.final_iteration(), sol.trace.termination);
    }
}
