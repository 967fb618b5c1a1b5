//! Per-iteration cost scaling study: how one damped normal-equation solve
//! and one learned forward pass grow with pixel count.

use crate::learned::solve::time_learned_iteration;
use crate::learned::MetaModel;
use crate::photo::{synth_scene, time_classical_iteration, SceneConfig, StereoInstance};
use crate::rng::RngState;
use crate::Result;

pub const SWEEP_RESOLUTIONS: [(usize, usize); 4] = [(16, 12), (32, 24), (64, 48), (128, 96)];

#[derive(Debug, Clone)]
pub struct TimingRow {
    pub width: usize,
    pub height: usize,
    pub pixels: usize,
    pub method: &'static str,
    pub wall_ms: f64,
}

fn sweep_instance(width: usize, height: usize, seed: u64) -> Result<StereoInstance> {
    let config = SceneConfig {
        width,
        height,
        ..SceneConfig::default()
    };
    synth_scene(&mut RngState::new(seed).derive(17), &config)
}

/// Measure per-iteration wall time of the classical LM linear solve and the
/// learned (conv) forward pass across the standard resolution sweep. Small
/// sizes take the best of `repeats` runs; the largest runs once.
pub fn scaling_sweep(model: &MetaModel, seed: u64, repeats: usize) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for (w, h) in SWEEP_RESOLUTIONS {
        let instance = sweep_instance(w, h, seed)?;
        let pixels = w * h;
        let runs = if pixels >= 64 * 48 { 1 } else { repeats.max(1) };
        let mut best_classical = f64::INFINITY;
        let mut best_learned = f64::INFINITY;
        for _ in 0..runs {
            best_classical = best_classical.min(time_classical_iteration(&instance)?);
        }
        for _ in 0..runs.max(2) {
            best_learned = best_learned.min(time_learned_iteration(&instance, model)?);
        }
        rows.push(TimingRow {
            width: w,
            height: h,
            pixels,
            method: "lm_iteration",
            wall_ms: best_classical,
        });
        rows.push(TimingRow {
            width: w,
            height: h,
            pixels,
            method: "learned_iteration",
            wall_ms: best_learned,
        });
    }
    Ok(rows)
}

/// Least-squares slope of log(wall time) against log(pixel count).
pub fn fit_power_law(rows: &[TimingRow], method: &str) -> f64 {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.wall_ms > 0.0)
        .map(|r| ((r.pixels as f64).ln(), r.wall_ms.ln()))
        .collect();
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn rows_to_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("width,height,pixels,method,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.width, r.height, r.pixels, r.method, r.wall_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_fit_recovers_slope() {
        let rows = vec![
            TimingRow { width: 1, height: 1, pixels: 100, method: "m", wall_ms: 1.0 },
            TimingRow { width: 1, height: 1, pixels: 400, method: "m", wall_ms: 16.0 },
            TimingRow { width: 1, height: 1, pixels: 1600, method: "m", wall_ms: 256.0 },
        ];
        let slope = fit_power_law(&rows, "m");
        assert!((slope - 2.0).abs() < 1e-12);
    }
}
