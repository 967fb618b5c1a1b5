//! Forward unroll with recording, and exact reverse-mode gradients through
//! the unrolled loop (backpropagation through time).
//!
//! Stop-gradient convention: the Φ(J, r) features of every step are treated
//! as constant inputs; no derivative flows through the residual or Jacobian
//! evaluators. Gradients do flow through the additive update chain
//! x_{i+1} = x_i + Δx_i, through the direct x input of the dense cell stack,
//! and through the recurrent hidden state.

use super::loss::{iterate_loss, iterate_loss_grad, GroundTruth, LossWeights};
use crate::learned::cell::{conv_lstm_cell_backward, lstm_cell_backward, ChannelImage};
use crate::learned::solve::{
    conv_forward_step, dense_forward_step, ConvStepIo, DenseStepIo, HiddenState,
};
use crate::learned::{features, MetaModel, NetKind};
use crate::linalg::DenseVector;
use crate::photo::{
    photometric_jacobian, photometric_residuals, InverseDepthMap, Se3Pose, StereoInstance, Z_MIN,
};
use crate::problem::LeastSquaresProblem;
use crate::{Error, Result};

/// One instance a training batch unrolls over.
pub enum TrainingInstance {
    Dense {
        problem: Box<dyn LeastSquaresProblem + Send + Sync>,
        x0: DenseVector,
        truth: DenseVector,
    },
    Stereo {
        instance: Box<StereoInstance>,
    },
}

impl TrainingInstance {
    pub fn ground_truth(&self) -> GroundTruth<'_> {
        match self {
            TrainingInstance::Dense { truth, .. } => GroundTruth::Params(truth),
            TrainingInstance::Stereo { instance } => GroundTruth::Stereo {
                z: &instance.truth_z,
                pose: &instance.truth_pose,
            },
        }
    }
}

pub enum StepRecord {
    Dense {
        io: DenseStepIo,
        /// Per parameter: true where the post-step clamp left the value
        /// untouched (gradient passes through).
        clamp_pass: Vec<bool>,
    },
    Conv {
        io: ConvStepIo,
        clamp_pass: Vec<bool>,
    },
}

/// Recorded forward values of one unrolled solve. Replaying the tape forward
/// reproduces the recorded loss exactly.
pub struct Tape {
    pub records: Vec<StepRecord>,
    /// x_0 .. x_N.
    pub iterates: Vec<DenseVector>,
    pub loss: f64,
}

fn stereo_state(instance: &StereoInstance, x: &DenseVector) -> (InverseDepthMap, Se3Pose) {
    instance.unpack(x)
}

/// Unroll the learned optimizer for exactly `n` steps (no early exit: the
/// training loop needs the full chain) and record everything the backward
/// pass consumes.
pub fn unroll_forward(
    model: &MetaModel,
    inst: &TrainingInstance,
    n: usize,
    weights: &LossWeights,
) -> Result<Tape> {
    match (&model.net, inst) {
        (NetKind::Dense(net), TrainingInstance::Dense { problem, x0, truth }) => {
            let mut x = x0.clone();
            let mut state = HiddenState::zeros(model, None);
            let mut records = Vec::with_capacity(n);
            let mut iterates = vec![x.clone()];
            let mut loss = 0.0;
            let truth_ref = GroundTruth::Params(truth);
            for _ in 0..n {
                let j = problem.jacobian(&x)?;
                let r = problem.residuals(&x)?;
                if !j.is_finite() || !r.is_finite() {
                    return Err(Error::NonFiniteEvaluation("unroll jacobian/residual"));
                }
                let feat = features::phi_small(&j, &r)?;
                let (io, new_state) = dense_forward_step(net, &feat, &x, &state)?;
                let pre = x.add_scaled(1.0, &io.delta);
                let mut post = pre.clone();
                problem.clamp_iterate(&mut post);
                if !post.is_finite() {
                    return Err(Error::NonFiniteEvaluation("unroll iterate"));
                }
                let clamp_pass = pre
                    .as_slice()
                    .iter()
                    .zip(post.as_slice())
                    .map(|(a, b)| a == b)
                    .collect();
                records.push(StepRecord::Dense { io, clamp_pass });
                x = post;
                state = new_state;
                loss += iterate_loss(&x, &truth_ref, weights)?;
                iterates.push(x.clone());
            }
            Ok(Tape {
                records,
                iterates,
                loss,
            })
        }
        (NetKind::Conv(net), TrainingInstance::Stereo { instance }) => {
            let (z0, pose0) = instance.default_init();
            let mut x = instance.pack(&z0, &pose0);
            let mut state = HiddenState::zeros(
                model,
                Some((instance.intrinsics.height, instance.intrinsics.width)),
            );
            let mut records = Vec::with_capacity(n);
            let mut iterates = vec![x.clone()];
            let mut loss = 0.0;
            let mut prev_step_norm = 0.0;
            let npix = instance.pixels();
            for i in 0..n {
                let (z, pose) = stereo_state(instance, &x);
                let (r, _) = photometric_residuals(instance, &z, &pose);
                if !r.is_finite() {
                    return Err(Error::NonFiniteEvaluation("unroll stereo residual"));
                }
                let sj = photometric_jacobian(instance, &z, &pose);
                let energy = 0.5 * r.dot(&r);
                let feat =
                    features::phi_dense(&sj, &r, energy, prev_step_norm, i as f64 / n as f64)?;
                let (io, new_state) = conv_forward_step(net, &feat, &state)?;
                let mut pre = x.clone();
                for (p, dz) in io.delta_z.iter().enumerate() {
                    pre[p] += dz;
                }
                for (k, dp) in io.delta_pose.iter().enumerate() {
                    pre[npix + k] += dp;
                }
                let mut post = pre.clone();
                let mut clamp_pass = vec![true; npix + 6];
                for p in 0..npix {
                    if post[p] < Z_MIN {
                        post[p] = Z_MIN;
                        clamp_pass[p] = false;
                    }
                }
                if !post.is_finite() {
                    return Err(Error::NonFiniteEvaluation("unroll stereo iterate"));
                }
                let mut norm2 = 0.0;
                for v in &io.delta_z {
                    norm2 += v * v;
                }
                for v in &io.delta_pose {
                    norm2 += v * v;
                }
                prev_step_norm = norm2.sqrt();
                records.push(StepRecord::Conv { io, clamp_pass });
                x = post;
                state = new_state;
                loss += iterate_loss(&x, &inst.ground_truth(), weights)?;
                iterates.push(x.clone());
            }
            Ok(Tape {
                records,
                iterates,
                loss,
            })
        }
        _ => Err(Error::ShapeMismatch {
            context: "unroll_forward",
            expected: "model variant matching instance kind".into(),
            got: "mismatched".into(),
        }),
    }
}

impl Tape {
    /// Re-run the forward math from the recorded stop-gradient inputs and
    /// x₀ and recompute the loss. Bit-exact against the recorded value.
    pub fn replay_loss(
        &self,
        model: &MetaModel,
        inst: &TrainingInstance,
        weights: &LossWeights,
    ) -> Result<f64> {
        let mut loss = 0.0;
        let truth = inst.ground_truth();
        let mut x = self.iterates[0].clone();
        match &model.net {
            NetKind::Dense(net) => {
                let mut state = HiddenState::zeros(model, None);
                for rec in &self.records {
                    let StepRecord::Dense { io, .. } = rec else {
                        return Err(Error::ShapeMismatch {
                            context: "replay_loss",
                            expected: "dense records".into(),
                            got: "conv".into(),
                        });
                    };
                    // Recorded cell-0 input is [features, x]; strip x and
                    // rebuild from the replayed iterate.
                    let feat_len = net.feature_dim;
                    let feat = features::FeatureVector {
                        data: DenseVector::from_vec(
                            io.cells[0].input.as_slice()[..feat_len].to_vec(),
                        ),
                        dim_x: net.x_dim,
                    };
                    let (new_io, new_state) = dense_forward_step(net, &feat, &x, &state)?;
                    let mut post = x.add_scaled(1.0, &new_io.delta);
                    if let TrainingInstance::Dense { problem, .. } = inst {
                        problem.clamp_iterate(&mut post);
                    }
                    x = post;
                    state = new_state;
                    loss += iterate_loss(&x, &truth, weights)?;
                }
            }
            NetKind::Conv(net) => {
                let TrainingInstance::Stereo { instance } = inst else {
                    return Err(Error::ShapeMismatch {
                        context: "replay_loss",
                        expected: "stereo instance".into(),
                        got: "dense".into(),
                    });
                };
                let npix = instance.pixels();
                let mut h = ChannelImage::zeros(
                    net.channels,
                    instance.intrinsics.height,
                    instance.intrinsics.width,
                );
                let mut c = h.clone();
                for rec in &self.records {
                    let StepRecord::Conv { io, .. } = rec else {
                        return Err(Error::ShapeMismatch {
                            context: "replay_loss",
                            expected: "conv records".into(),
                            got: "dense".into(),
                        });
                    };
                    // Recorded cell input already carries the broadcast
                    // globals; rerun the cell and heads from it.
                    let cell_io =
                        crate::learned::cell::conv_lstm_cell(&io.io.input, &h, &c, net)?;
                    let n = cell_io.h_new.pixels();
                    let mut delta_z = vec![net.depth_b; n];
                    for ch in 0..net.channels {
                        let wc = net.depth_w[ch];
                        if wc == 0.0 {
                            continue;
                        }
                        for (dz, hv) in delta_z.iter_mut().zip(cell_io.h_new.channel(ch)) {
                            *dz += wc * hv;
                        }
                    }
                    let mut pooled = vec![0.0; net.channels];
                    for (ch, p) in pooled.iter_mut().enumerate() {
                        *p = cell_io.h_new.channel(ch).iter().sum::<f64>() / n as f64;
                    }
                    for (p, dz) in delta_z.iter().enumerate() {
                        x[p] += dz;
                        if x[p] < Z_MIN {
                            x[p] = Z_MIN;
                        }
                    }
                    for k in 0..6 {
                        let mut acc = net.pose_b[k];
                        for ch in 0..net.channels {
                            acc += net.pose_w.get(k, ch) * pooled[ch];
                        }
                        x[npix + k] += acc;
                    }
                    h = cell_io.h_new.clone();
                    c = cell_io.c_new.clone();
                    loss += iterate_loss(&x, &truth, weights)?;
                }
            }
        }
        Ok(loss)
    }
}

/// Accumulate the exact reverse-mode gradient of this tape's loss into
/// `grads` (a zeroed structural clone of the model).
pub fn backward(
    tape: &Tape,
    model: &MetaModel,
    inst: &TrainingInstance,
    weights: &LossWeights,
    grads: &mut MetaModel,
) -> Result<()> {
    let truth = inst.ground_truth();
    let n_steps = tape.records.len();
    if n_steps == 0 {
        return Ok(());
    }
    match (&model.net, &mut grads.net) {
        (NetKind::Dense(net), NetKind::Dense(gnet)) => {
            let num_cells = net.cells.len();
            // Time-carried gradients.
            let mut carry_h: Vec<DenseVector> =
                net.cells.iter().map(|c| DenseVector::zeros(c.hidden)).collect();
            let mut carry_c = carry_h.clone();
            let mut d_x = iterate_loss_grad(&tape.iterates[n_steps], &truth, weights);
            for i in (0..n_steps).rev() {
                let StepRecord::Dense { io, clamp_pass } = &tape.records[i] else {
                    unreachable!("dense tape")
                };
                // Through the clamp into (x_i + Δx_i).
                let mut d_pre = d_x.clone();
                for (v, pass) in d_pre.as_mut_slice().iter_mut().zip(clamp_pass) {
                    if !pass {
                        *v = 0.0;
                    }
                }
                // Output head.
                let h_top = &io.cells[num_cells - 1].h_new;
                let mut d_h_top = DenseVector::zeros(net.cells[num_cells - 1].hidden);
                for r in 0..net.x_dim {
                    let g = d_pre[r];
                    gnet.out_b[r] += g;
                    if g != 0.0 {
                        let wrow = net.out_w.row(r);
                        let grow = gnet.out_w.row_mut(r);
                        for k in 0..h_top.len() {
                            grow[k] += g * h_top[k];
                            d_h_top[k] += g * wrow[k];
                        }
                    }
                }
                // Within-step inflows, top cell first.
                let mut inflow_h = carry_h.clone();
                let inflow_c = carry_c.clone();
                for (k, v) in d_h_top.as_slice().iter().enumerate() {
                    inflow_h[num_cells - 1][k] += v;
                }
                let mut d_x_direct = DenseVector::zeros(net.x_dim);
                for c in (0..num_cells).rev() {
                    let gcell = &mut gnet.cells[c];
                    let (d_input, d_h_prev, d_c_prev) = lstm_cell_backward(
                        &io.cells[c],
                        &net.cells[c],
                        &inflow_h[c],
                        &inflow_c[c],
                        &mut gcell.w,
                        &mut gcell.b,
                    );
                    carry_h[c] = d_h_prev;
                    carry_c[c] = d_c_prev;
                    if c > 0 {
                        for (k, v) in d_input.as_slice().iter().enumerate() {
                            inflow_h[c - 1][k] += v;
                        }
                    } else {
                        // Cell-0 input is [features (stop-grad), x].
                        let feat_len = net.feature_dim;
                        for k in 0..net.x_dim {
                            d_x_direct[k] = d_input[feat_len + k];
                        }
                    }
                }
                // Gradient into x_i: additive chain + direct input + loss term.
                d_x = d_pre.add_scaled(1.0, &d_x_direct);
                if i >= 1 {
                    let term = iterate_loss_grad(&tape.iterates[i], &truth, weights);
                    d_x = d_x.add_scaled(1.0, &term);
                }
            }
        }
        (NetKind::Conv(net), NetKind::Conv(gnet)) => {
            let TrainingInstance::Stereo { instance } = inst else {
                return Err(Error::ShapeMismatch {
                    context: "backward",
                    expected: "stereo instance".into(),
                    got: "dense".into(),
                });
            };
            let npix = instance.pixels();
            let (hgt, wid) = (instance.intrinsics.height, instance.intrinsics.width);
            let mut carry_h = ChannelImage::zeros(net.channels, hgt, wid);
            let mut carry_c = ChannelImage::zeros(net.channels, hgt, wid);
            let mut d_x = iterate_loss_grad(&tape.iterates[n_steps], &truth, weights);
            for i in (0..n_steps).rev() {
                let StepRecord::Conv { io, clamp_pass } = &tape.records[i] else {
                    unreachable!("conv tape")
                };
                let mut d_pre = d_x.clone();
                for (v, pass) in d_pre.as_mut_slice().iter_mut().zip(clamp_pass) {
                    if !pass {
                        *v = 0.0;
                    }
                }
                // Heads: depth 1x1 projection and pooled pose head feed the
                // hidden image.
                let mut d_h = carry_h.clone();
                let d_z = &d_pre.as_slice()[..npix];
                let d_pose = &d_pre.as_slice()[npix..];
                let h_new = &io.io.h_new;
                let n = h_new.pixels();
                gnet.depth_b += d_z.iter().sum::<f64>();
                for ch in 0..net.channels {
                    let mut acc = 0.0;
                    let hch = h_new.channel(ch);
                    let dch = d_h.channel_mut(ch);
                    let wc = net.depth_w[ch];
                    for p in 0..n {
                        acc += d_z[p] * hch[p];
                        dch[p] += wc * d_z[p];
                    }
                    gnet.depth_w[ch] += acc;
                }
                let mut d_pooled = vec![0.0; net.channels];
                for k in 0..6 {
                    let g = d_pose[k];
                    gnet.pose_b[k] += g;
                    if g != 0.0 {
                        for ch in 0..net.channels {
                            gnet.pose_w[(k, ch)] += g * io.pooled[ch];
                            d_pooled[ch] += g * net.pose_w.get(k, ch);
                        }
                    }
                }
                for ch in 0..net.channels {
                    let share = d_pooled[ch] / n as f64;
                    if share != 0.0 {
                        for v in d_h.channel_mut(ch) {
                            *v += share;
                        }
                    }
                }
                let (d_h_prev, d_c_prev) = conv_lstm_cell_backward(
                    &io.io,
                    net,
                    &d_h,
                    &carry_c,
                    &mut gnet.kernel,
                    &mut gnet.bias,
                );
                carry_h = d_h_prev;
                carry_c = d_c_prev;
                // Conv input carries no x path: only the additive chain.
                d_x = d_pre;
                if i >= 1 {
                    let term = iterate_loss_grad(&tape.iterates[i], &truth, weights);
                    d_x = d_x.add_scaled(1.0, &term);
                }
            }
        }
        _ => {
            return Err(Error::ShapeMismatch {
                context: "backward",
                expected: "matching grad container".into(),
                got: "mismatched".into(),
            })
        }
    }
    Ok(())
}

/// Compare the BPTT gradients against central finite differences of the
/// tape-replay loss (the features are stop-gradient constants, so the replay
/// is the function the gradients differentiate). Returns the worst relative
/// discrepancy over all parameters and its index.
pub fn fd_gradcheck(
    model: &MetaModel,
    instances: &[TrainingInstance],
    unroll: usize,
    weights: &LossWeights,
) -> Result<(f64, usize)> {
    let (analytic, _) = bptt_gradients(model, instances, unroll, weights, 0.0)?;
    let tapes: Vec<Tape> = instances
        .iter()
        .map(|inst| unroll_forward(model, inst, unroll, weights))
        .collect::<Result<_>>()?;
    let loss_of = |m: &MetaModel| -> Result<f64> {
        let mut total = 0.0;
        for (tape, inst) in tapes.iter().zip(instances) {
            total += tape.replay_loss(m, inst, weights)?;
        }
        Ok(total / instances.len() as f64)
    };
    let base = model.flatten();
    let mut worst = 0.0_f64;
    let mut worst_idx = 0;
    let mut probe = model.clone();
    for k in 0..base.len() {
        let h = 1e-6 * base[k].abs().max(1.0);
        let mut flat = base.clone();
        flat[k] = base[k] + h;
        probe.assign_flat(&flat);
        let up = loss_of(&probe)?;
        flat[k] = base[k] - h;
        probe.assign_flat(&flat);
        let down = loss_of(&probe)?;
        let fd = (up - down) / (2.0 * h);
        // 1e-5 floor keeps near-zero gradients from being compared against
        // finite-difference cancellation noise (~1e-10 for an O(1) loss).
        let denom = fd.abs().max(analytic[k].abs()).max(1e-5);
        let rel = (fd - analytic[k]).abs() / denom;
        if rel > worst {
            worst = rel;
            worst_idx = k;
        }
    }
    Ok((worst, worst_idx))
}

#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    /// Batch-mean loss.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Exact gradients of the batch-mean meta-loss, clipped to `clip` in global
/// norm (clipping rescales, never redirects). Returns the flattened gradient
/// in the model's parameter layout.
pub fn bptt_gradients(
    model: &MetaModel,
    instances: &[TrainingInstance],
    unroll: usize,
    weights: &LossWeights,
    clip: f64,
) -> Result<(Vec<f64>, BatchStats)> {
    if instances.is_empty() || unroll == 0 {
        return Err(Error::InvalidConfig(
            "bptt_gradients needs at least one instance and one step".into(),
        ));
    }
    let mut grads = model.zeros_like();
    let mut total_loss = 0.0;
    for inst in instances {
        let tape = unroll_forward(model, inst, unroll, weights)?;
        backward(&tape, model, inst, weights, &mut grads)?;
        total_loss += tape.loss;
    }
    let scale = 1.0 / instances.len() as f64;
    let mut flat = grads.flatten();
    for v in &mut flat {
        *v *= scale;
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { step: 0 });
    }
    let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let clipped = clip > 0.0 && norm > clip;
    if clipped {
        let s = clip / norm;
        for v in &mut flat {
            *v *= s;
        }
    }
    Ok((
        flat,
        BatchStats {
            loss: total_loss * scale,
            grad_norm: norm,
            clipped,
        },
    ))
}
