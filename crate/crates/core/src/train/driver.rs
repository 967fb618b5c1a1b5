//! The outer training loop: sample instance batches, take BPTT gradients,
//! apply ADAM, track validation loss, checkpoint, and return the best model.

use super::adam::{adam_step, AdamParams, AdamState};
use super::loss::LossWeights;
use super::tape::{bptt_gradients, unroll_forward, TrainingInstance};
use crate::curves::{sample_instance, CurveFamily, CurveProblem, FamilyTag};
use crate::learned::{MetaModel, MODEL_FORMAT_VERSION};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::photo::{synth_scene, SceneConfig};
use crate::problem::LinearProblem;
use crate::rng::RngState;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Stream salts of the hierarchical seeding scheme
/// (root -> stream -> instance index).
const TRAIN_STREAM: u64 = 1;
const MODEL_INIT_STREAM: u64 = 2;

/// Instance indices with k % 10 == 9 are held out for validation.
fn is_validation_index(k: u64) -> bool {
    k % 10 == 9
}

#[derive(Debug, Clone)]
pub enum TrainProblemKind {
    /// The four-family curve mixture.
    Curves,
    /// Synthetic stereo scenes at the configured resolution.
    Stereo(SceneConfig),
    /// A single fixed linear problem (smoke tests).
    FixedLinear {
        a: DenseMatrix,
        b: DenseVector,
        truth: DenseVector,
    },
}

#[derive(Debug, Clone)]
pub struct MetaTrainConfig {
    pub problem: TrainProblemKind,
    /// Unroll length N.
    pub unroll: usize,
    pub batch_size: usize,
    pub outer_steps: usize,
    pub adam: AdamParams,
    pub weights: LossWeights,
    /// Global gradient-norm clip (0 disables).
    pub grad_clip: f64,
    /// Validation + checkpoint cadence in outer steps.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Dense variant: hidden units and stacked cell count.
    pub hidden: usize,
    pub num_cells: usize,
    /// Conv variant: hidden channels.
    pub conv_channels: usize,
    pub val_instances: usize,
    /// Fraction of outer steps allowed to discard non-finite batches before
    /// training aborts.
    pub failure_budget: f64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            problem: TrainProblemKind::Curves,
            unroll: 15,
            batch_size: 32,
            outer_steps: 20_000,
            adam: AdamParams::default(),
            weights: LossWeights::default(),
            grad_clip: 10.0,
            checkpoint_every: 500,
            seed: 0,
            hidden: 32,
            num_cells: 2,
            conv_channels: 16,
            val_instances: 100,
            failure_budget: 0.01,
            checkpoint_dir: None,
        }
    }
}

impl MetaTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.unroll == 0 || self.batch_size == 0 || self.outer_steps == 0 {
            return Err(Error::InvalidConfig(
                "unroll, batch size and outer steps must be positive".into(),
            ));
        }
        if self.adam.lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training-curve CSV.
#[derive(Debug, Clone, Copy)]
pub struct TrainRow {
    pub outer_step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

pub fn train_rows_to_csv(rows: &[TrainRow]) -> String {
    let mut out = String::from("outer_step,train_loss,val_loss,grad_norm,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.outer_step, r.train_loss, r.val_loss, r.grad_norm, r.wall_ms
        ));
    }
    out
}

/// Resumable training snapshot: current and best models plus ADAM state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: MetaModel,
    pub best_model: MetaModel,
    pub best_val: f64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
    pub outer_step: usize,
    pub instance_cursor: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)
            .map_err(|e| Error::CorruptFile(format!("checkpoint serialize: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::CorruptFile(format!("{}: {e}", path.display())))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptFile(format!("{}: missing version", path.display())))?;
        if found != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: MODEL_FORMAT_VERSION,
                found: found as u32,
            });
        }
        serde_json::from_value(value)
            .map_err(|e| Error::CorruptFile(format!("{}: {e}", path.display())))
    }
}

/// Deterministically materialize training/validation instance `index`.
fn make_instance(
    kind: &TrainProblemKind,
    root: &RngState,
    index: u64,
) -> Result<TrainingInstance> {
    match kind {
        TrainProblemKind::Curves => {
            let mut rng = root.derive(TRAIN_STREAM).derive(index);
            let tag = FamilyTag::ALL[rng.below(4) as usize];
            let family = CurveFamily::standard(tag);
            let inst = sample_instance(&family, &mut rng);
            let x0 = inst.family.initial_guess();
            let truth = DenseVector::from_vec(vec![inst.truth.0, inst.truth.1]);
            Ok(TrainingInstance::Dense {
                problem: Box::new(CurveProblem::new(inst)),
                x0,
                truth,
            })
        }
        TrainProblemKind::Stereo(config) => {
            // A sampled scene can be degenerate; retry on derived substreams.
            for attempt in 0..32u64 {
                let mut rng = root.derive(TRAIN_STREAM).derive(index).derive(attempt);
                match synth_scene(&mut rng, config) {
                    Ok(instance) => {
                        return Ok(TrainingInstance::Stereo {
                            instance: Box::new(instance),
                        })
                    }
                    Err(Error::DegenerateScene { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::DegenerateScene {
                visible_fraction: 0.0,
            })
        }
        TrainProblemKind::FixedLinear { a, b, truth } => Ok(TrainingInstance::Dense {
            problem: Box::new(LinearProblem::new(a.clone(), b.clone()).with_truth(truth.clone())),
            x0: DenseVector::zeros(a.cols()),
            truth: truth.clone(),
        }),
    }
}

fn init_model(config: &MetaTrainConfig) -> MetaModel {
    let mut rng = RngState::new(config.seed).derive(MODEL_INIT_STREAM);
    match config.problem {
        TrainProblemKind::Stereo(_) => MetaModel::conv(config.conv_channels, &mut rng),
        _ => MetaModel::dense(2, config.hidden, config.num_cells, &mut rng),
    }
}

fn validation_loss(
    model: &MetaModel,
    config: &MetaTrainConfig,
    root: &RngState,
) -> Result<f64> {
    let mut total = 0.0;
    let mut k = 0u64;
    let mut used = 0usize;
    while used < config.val_instances {
        if is_validation_index(k) {
            let inst = make_instance(&config.problem, root, k)?;
            match unroll_forward(model, &inst, config.unroll, &config.weights) {
                Ok(tape) => total += tape.loss,
                // A diverging validation unroll counts as a large penalty
                // rather than aborting model selection.
                Err(Error::NonFiniteEvaluation(_)) => total += 1e9,
                Err(e) => return Err(e),
            }
            used += 1;
        }
        k += 1;
    }
    Ok(total / config.val_instances as f64)
}

/// Train the learned optimizer. Returns the best-validation model and the
/// training-curve rows. Deterministic given the config seed.
pub fn train_meta(
    config: &MetaTrainConfig,
    resume: Option<Checkpoint>,
) -> Result<(MetaModel, Vec<TrainRow>)> {
    config.validate()?;
    let root = RngState::new(config.seed);
    let (mut model, mut adam_state, mut best_model, mut best_val, start_step, mut cursor) =
        match resume {
            Some(cp) => {
                let adam = AdamState {
                    m: cp.adam_m,
                    v: cp.adam_v,
                    t: cp.adam_t,
                };
                (
                    cp.model,
                    adam,
                    cp.best_model,
                    cp.best_val,
                    cp.outer_step,
                    cp.instance_cursor,
                )
            }
            None => {
                let model = init_model(config);
                let n = model.num_params();
                let best = model.clone();
                (model, AdamState::new(n), best, f64::INFINITY, 0, 0)
            }
        };
    if adam_state.m.len() != model.num_params() {
        return Err(Error::InvalidConfig(
            "checkpoint does not match the configured model shape".into(),
        ));
    }

    let mut rows = Vec::with_capacity(config.outer_steps.saturating_sub(start_step));
    let mut discarded = 0usize;
    let budget = ((config.outer_steps as f64) * config.failure_budget).ceil() as usize;
    let mut last_val = f64::NAN;

    for step in start_step..config.outer_steps {
        let tick = Instant::now();
        // Assemble the batch from the training partition.
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            let k = cursor;
            cursor += 1;
            if is_validation_index(k) {
                continue;
            }
            batch.push(make_instance(&config.problem, &root, k)?);
        }
        let step_result = bptt_gradients(
            &model,
            &batch,
            config.unroll,
            &config.weights,
            config.grad_clip,
        );
        let (train_loss, grad_norm) = match step_result {
            Ok((flat, stats)) => {
                let mut params = model.flatten();
                adam_step(&mut params, &flat, &mut adam_state, &config.adam)?;
                model.assign_flat(&params);
                (stats.loss, stats.grad_norm)
            }
            Err(Error::NonFiniteGradient { .. }) | Err(Error::NonFiniteEvaluation(_)) => {
                discarded += 1;
                if discarded > budget {
                    return Err(Error::NonFiniteGradient { step });
                }
                (f64::NAN, f64::NAN)
            }
            Err(e) => return Err(e),
        };

        let is_cadence =
            step % config.checkpoint_every == 0 || step + 1 == config.outer_steps;
        if is_cadence {
            last_val = validation_loss(&model, config, &root)?;
            if last_val < best_val {
                best_val = last_val;
                best_model = model.clone();
            }
            if let Some(dir) = &config.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                let cp = Checkpoint {
                    version: MODEL_FORMAT_VERSION,
                    model: model.clone(),
                    best_model: best_model.clone(),
                    best_val,
                    adam_m: adam_state.m.clone(),
                    adam_v: adam_state.v.clone(),
                    adam_t: adam_state.t,
                    outer_step: step + 1,
                    instance_cursor: cursor,
                    seed: config.seed,
                };
                cp.save(&dir.join("checkpoint_latest.json"))?;
            }
        }
        rows.push(TrainRow {
            outer_step: step,
            train_loss,
            val_loss: last_val,
            grad_norm,
            wall_ms: tick.elapsed().as_secs_f64() * 1e3,
        });
    }
    // Final validation decides the returned model when cadence missed it.
    if best_val.is_infinite() {
        best_model = model;
    }
    Ok((best_model, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config(outer_steps: usize) -> MetaTrainConfig {
        // One fixed overdetermined linear problem.
        let a = DenseMatrix::from_fn(6, 2, |i, j| ((i + 1) as f64 * 0.3) + j as f64 * 0.7);
        let truth = DenseVector::from_vec(vec![0.4, -0.3]);
        let b = a.matvec(&truth);
        MetaTrainConfig {
            problem: TrainProblemKind::FixedLinear { a, b, truth },
            unroll: 5,
            batch_size: 4,
            outer_steps,
            hidden: 8,
            num_cells: 1,
            checkpoint_every: 100,
            val_instances: 2,
            seed: 11,
            ..MetaTrainConfig::default()
        }
    }

    #[test]
    fn linear_smoke_training_reduces_validation_loss() {
        let config = smoke_config(2000);
        let root = RngState::new(config.seed);
        let initial = init_model(&config);
        let initial_val = validation_loss(&initial, &config, &root).unwrap();
        let (model, rows) = train_meta(&config, None).unwrap();
        let final_val = validation_loss(&model, &config, &root).unwrap();
        assert!(rows.len() == 2000);
        assert!(
            final_val <= 0.1 * initial_val,
            "validation loss {initial_val} -> {final_val}, less than 90% reduction"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let config = smoke_config(60);
        let (m1, r1) = train_meta(&config, None).unwrap();
        let (m2, r2) = train_meta(&config, None).unwrap();
        assert_eq!(m1.flatten(), m2.flatten());
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
            assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
        }
    }

    #[test]
    fn checkpoint_resume_continues_step_index() {
        let dir = std::env::temp_dir().join("nlsq_train_resume_test");
        std::fs::create_dir_all(&dir).ok();
        let mut config = smoke_config(40);
        config.checkpoint_every = 20;
        config.checkpoint_dir = Some(dir.clone());
        let (_, rows_a) = train_meta(&config, None).unwrap();
        assert_eq!(rows_a.last().unwrap().outer_step, 39);
        let cp = Checkpoint::load(&dir.join("checkpoint_latest.json")).unwrap();
        assert!(cp.outer_step > 0);
        let mut config2 = config.clone();
        config2.outer_steps = 60;
        let (_, rows_b) = train_meta(&config2, Some(cp)).unwrap();
        let first = rows_b.first().unwrap().outer_step;
        let last = rows_b.last().unwrap().outer_step;
        assert_eq!(last, 59);
        assert!(first >= 20, "resumed from step {first}");
        for w in rows_b.windows(2) {
            assert_eq!(w[1].outer_step, w[0].outer_step + 1);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
