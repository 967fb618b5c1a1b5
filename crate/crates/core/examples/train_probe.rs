use nlsq_core::bench::run_benchmark;
use nlsq_core::rng::RngState;
use nlsq_core::train::{train_meta, MetaTrainConfig, TrainProblemKind};
use std::time::Instant;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let config = MetaTrainConfig {
        problem: TrainProblemKind::Curves,
        outer_steps: steps,
        seed: 7,
        checkpoint_every: 250,
        ..MetaTrainConfig::default()
    };
    let tick = Instant::now();
    let (model, rows) = train_meta(&config, None).unwrap();
    println!("trained {} steps in {:.1}s", steps, tick.elapsed().as_secs_f64());
    for r in rows.iter().step_by(250) {
        println!("step {:5}  train {:10.4}  val {:10.4}  gnorm {:8.3}", r.outer_step, r.train_loss, r.val_loss, r.grad_norm);
    }
    if let Some(last) = rows.last() {
        println!("final: train {:.4} val {:.4}", last.train_loss, last.val_loss);
    }
    let out = run_benchmark(Some(&model), 100, 15, &RngState::new(99)).unwrap();
    println!("{}", out.summary.render());
}
