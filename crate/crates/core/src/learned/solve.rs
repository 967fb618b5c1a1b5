//! The learned optimizer's iteration loop: predict an update from Φ(J, r),
//! apply it additively, repeat until the step norm or iteration budget runs
//! out. Hidden state starts at zero and is threaded through the loop.

use super::cell::{conv_lstm_cell, lstm_cell, CellIo, ChannelImage, ConvCellIo};
use super::features::{phi_dense, phi_small, FeatureImage, FeatureVector, GLOBAL_FEATURES};
use super::{ConvNet, DenseNet, MetaModel, NetKind};
use crate::classical::DIVERGENCE_FACTOR;
use crate::linalg::DenseVector;
use crate::photo::solve::StereoSolution;
use crate::photo::{
    photometric_jacobian, photometric_residuals, InverseDepthMap, Se3Pose, StereoInstance, Z_MIN,
};
use crate::problem::{objective, LeastSquaresProblem, SolverTrace, Termination};
use crate::{Error, Result};
use std::time::Instant;

/// Default early-exit threshold for the learned loop.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Recurrent state owned by one solve.
#[derive(Debug, Clone)]
pub enum HiddenState {
    /// Per stacked cell: (h, c).
    Dense(Vec<(DenseVector, DenseVector)>),
    Conv { h: ChannelImage, c: ChannelImage },
}

impl HiddenState {
    pub fn zeros(model: &MetaModel, spatial: Option<(usize, usize)>) -> Self {
        match &model.net {
            NetKind::Dense(n) => HiddenState::Dense(
                n.cells
                    .iter()
                    .map(|c| (DenseVector::zeros(c.hidden), DenseVector::zeros(c.hidden)))
                    .collect(),
            ),
            NetKind::Conv(n) => {
                let (h, w) = spatial.expect("conv state needs spatial dims");
                HiddenState::Conv {
                    h: ChannelImage::zeros(n.channels, h, w),
                    c: ChannelImage::zeros(n.channels, h, w),
                }
            }
        }
    }
}

/// Recorded forward pass of one dense update step (consumed by training).
#[derive(Debug, Clone)]
pub struct DenseStepIo {
    pub cells: Vec<CellIo>,
    pub delta: DenseVector,
}

pub fn dense_forward_step(
    net: &DenseNet,
    features: &FeatureVector,
    x: &DenseVector,
    state: &HiddenState,
) -> Result<(DenseStepIo, HiddenState)> {
    let states = match state {
        HiddenState::Dense(s) => s,
        HiddenState::Conv { .. } => {
            return Err(Error::ShapeMismatch {
                context: "dense_forward_step state",
                expected: "dense".into(),
                got: "conv".into(),
            })
        }
    };
    if states.len() != net.cells.len() {
        return Err(Error::ShapeMismatch {
            context: "dense_forward_step cells",
            expected: net.cells.len().to_string(),
            got: states.len().to_string(),
        });
    }
    let mut input = Vec::with_capacity(features.data.len() + x.len());
    input.extend_from_slice(features.data.as_slice());
    input.extend_from_slice(x.as_slice());
    let mut input = DenseVector::from_vec(input);
    let mut ios = Vec::with_capacity(net.cells.len());
    let mut new_states = Vec::with_capacity(net.cells.len());
    for (cell, (h_prev, c_prev)) in net.cells.iter().zip(states) {
        let io = lstm_cell(&input, h_prev, c_prev, cell)?;
        input = io.h_new.clone();
        new_states.push((io.h_new.clone(), io.c_new.clone()));
        ios.push(io);
    }
    let h_top = &ios.last().expect("at least one cell").h_new;
    let mut delta = net.out_w.matvec(h_top);
    for (d, b) in delta.as_mut_slice().iter_mut().zip(net.out_b.as_slice()) {
        *d += b;
    }
    Ok((
        DenseStepIo { cells: ios, delta },
        HiddenState::Dense(new_states),
    ))
}

/// Recorded forward pass of one conv update step.
#[derive(Debug, Clone)]
pub struct ConvStepIo {
    pub io: ConvCellIo,
    /// Mean-pooled hidden activations feeding the pose head.
    pub pooled: DenseVector,
    pub delta_z: Vec<f64>,
    pub delta_pose: [f64; 6],
}

/// Broadcast the global feature vector as constant channels under the
/// per-pixel channels.
pub fn conv_input(features: &FeatureImage) -> ChannelImage {
    let (h, w) = (features.height, features.width);
    let mut input = ChannelImage::zeros(features.channels.channels + GLOBAL_FEATURES, h, w);
    input.data[..features.channels.data.len()].copy_from_slice(&features.channels.data);
    for (k, g) in features.global.iter().enumerate() {
        input
            .channel_mut(features.channels.channels + k)
            .fill(*g);
    }
    input
}

pub fn conv_forward_step(
    net: &ConvNet,
    features: &FeatureImage,
    state: &HiddenState,
) -> Result<(ConvStepIo, HiddenState)> {
    let (h_prev, c_prev) = match state {
        HiddenState::Conv { h, c } => (h, c),
        HiddenState::Dense(_) => {
            return Err(Error::ShapeMismatch {
                context: "conv_forward_step state",
                expected: "conv".into(),
                got: "dense".into(),
            })
        }
    };
    let input = conv_input(features);
    let io = conv_lstm_cell(&input, h_prev, c_prev, net)?;
    let n = io.h_new.pixels();
    // Per-pixel depth updates: 1x1 projection of the hidden image.
    let mut delta_z = vec![net.depth_b; n];
    for c in 0..net.channels {
        let wc = net.depth_w[c];
        if wc == 0.0 {
            continue;
        }
        for (dz, hv) in delta_z.iter_mut().zip(io.h_new.channel(c)) {
            *dz += wc * hv;
        }
    }
    // Pose updates: global average pooling + linear head.
    let mut pooled = DenseVector::zeros(net.channels);
    for c in 0..net.channels {
        pooled[c] = io.h_new.channel(c).iter().sum::<f64>() / n as f64;
    }
    let mut delta_pose = [0.0; 6];
    for (k, dp) in delta_pose.iter_mut().enumerate() {
        let mut acc = net.pose_b[k];
        for c in 0..net.channels {
            acc += net.pose_w.get(k, c) * pooled[c];
        }
        *dp = acc;
    }
    let new_state = HiddenState::Conv {
        h: io.h_new.clone(),
        c: io.c_new.clone(),
    };
    Ok((
        ConvStepIo {
            io,
            pooled,
            delta_z,
            delta_pose,
        },
        new_state,
    ))
}

/// Feature input for [`predict_update`], matching the model variant.
pub enum Features<'a> {
    Small(&'a FeatureVector),
    Image(&'a FeatureImage),
}

/// Predict a parameter update. Dense variant consumes the feature vector and
/// the current parameters; conv variant consumes the feature image and emits
/// per-pixel depth updates plus 6 pooled pose updates.
pub fn predict_update(
    model: &MetaModel,
    features: Features,
    state: &HiddenState,
    x: &DenseVector,
) -> Result<(DenseVector, HiddenState)> {
    match (&model.net, features) {
        (NetKind::Dense(net), Features::Small(f)) => {
            let (io, state) = dense_forward_step(net, f, x, state)?;
            Ok((io.delta, state))
        }
        (NetKind::Conv(net), Features::Image(f)) => {
            let (io, state) = conv_forward_step(net, f, state)?;
            let mut delta = io.delta_z;
            delta.extend_from_slice(&io.delta_pose);
            Ok((DenseVector::from_vec(delta), state))
        }
        _ => Err(Error::ShapeMismatch {
            context: "predict_update",
            expected: "features matching model variant".into(),
            got: "mismatched variant".into(),
        }),
    }
}

/// Run the learned optimizer on a small problem for up to `n` iterations,
/// stopping early once ‖Δx‖ < epsilon. The trace records every applied
/// iterate; hidden state starts at zero.
pub fn learned_solve(
    problem: &dyn LeastSquaresProblem,
    model: &MetaModel,
    x0: &DenseVector,
    n: usize,
    epsilon: f64,
) -> Result<SolverTrace> {
    let net = model.as_dense()?;
    if x0.len() != problem.dim_x() || net.x_dim != problem.dim_x() {
        return Err(Error::DimensionMismatch {
            context: "learned_solve x0",
            expected: problem.dim_x(),
            got: x0.len(),
        });
    }
    let e0 = objective(problem, x0)?;
    let mut trace = SolverTrace::start(x0.clone(), e0);
    let mut x = x0.clone();
    let mut state = HiddenState::zeros(model, None);
    trace.termination = Termination::MaxIterations;
    for _ in 0..n {
        let tick = Instant::now();
        let j = problem.jacobian(&x)?;
        let r = problem.residuals(&x)?;
        if !j.is_finite() || !r.is_finite() {
            trace.termination = Termination::Diverged;
            return Ok(trace);
        }
        let features = match phi_small(&j, &r) {
            Ok(f) => f,
            Err(Error::NonFiniteEvaluation(_)) => {
                trace.termination = Termination::Diverged;
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        let (delta, new_state) = predict_update(model, Features::Small(&features), &state, &x)?;
        let norm = delta.norm();
        if norm < epsilon {
            trace.termination = Termination::StepTolerance;
            return Ok(trace);
        }
        let mut x_new = x.add_scaled(1.0, &delta);
        problem.clamp_iterate(&mut x_new);
        if !x_new.is_finite() {
            trace.termination = Termination::Diverged;
            return Ok(trace);
        }
        let e = match objective(problem, &x_new) {
            Ok(e) => e,
            Err(Error::NonFiniteEvaluation(_)) | Err(Error::DomainError(_)) => {
                trace.termination = Termination::Diverged;
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        x = x_new;
        state = new_state;
        trace.push(x.clone(), e, norm, tick.elapsed().as_secs_f64() * 1e3);
        if e > DIVERGENCE_FACTOR * e0.max(f64::MIN_POSITIVE) {
            trace.termination = Termination::Diverged;
            return Ok(trace);
        }
    }
    Ok(trace)
}

/// Learned solve over a stereo instance with the conv variant.
pub fn learned_solve_stereo(
    instance: &StereoInstance,
    model: &MetaModel,
    z0: InverseDepthMap,
    pose0: Se3Pose,
    n: usize,
    epsilon: f64,
) -> Result<StereoSolution> {
    let net = model.as_conv()?;
    let mut z = z0;
    let mut pose = pose0;
    let (r0, _) = photometric_residuals(instance, &z, &pose);
    let e0 = 0.5 * r0.dot(&r0);
    let mut trace = SolverTrace::start(instance.pack(&z, &pose), e0);
    trace.termination = Termination::MaxIterations;
    let mut state = HiddenState::zeros(
        model,
        Some((instance.intrinsics.height, instance.intrinsics.width)),
    );
    let mut energy = e0;
    let mut prev_step_norm = 0.0;
    for i in 0..n {
        let tick = Instant::now();
        let (r, _) = photometric_residuals(instance, &z, &pose);
        let sj = photometric_jacobian(instance, &z, &pose);
        let features = phi_dense(&sj, &r, energy, prev_step_norm, i as f64 / n.max(1) as f64)?;
        let (io, new_state) = conv_forward_step(net, &features, &state)?;
        let mut norm2 = 0.0;
        for v in &io.delta_z {
            norm2 += v * v;
        }
        for v in &io.delta_pose {
            norm2 += v * v;
        }
        let norm = norm2.sqrt();
        if norm < epsilon {
            trace.termination = Termination::StepTolerance;
            return Ok(StereoSolution { z, pose, trace });
        }
        for (zv, dz) in z.z.iter_mut().zip(&io.delta_z) {
            *zv = (*zv + dz).max(Z_MIN);
        }
        pose = Se3Pose::new(
            [
                pose.t[0] + io.delta_pose[0],
                pose.t[1] + io.delta_pose[1],
                pose.t[2] + io.delta_pose[2],
            ],
            [
                pose.alpha[0] + io.delta_pose[3],
                pose.alpha[1] + io.delta_pose[4],
                pose.alpha[2] + io.delta_pose[5],
            ],
        );
        let (r_new, _) = photometric_residuals(instance, &z, &pose);
        energy = 0.5 * r_new.dot(&r_new);
        state = new_state;
        prev_step_norm = norm;
        trace.push(
            instance.pack(&z, &pose),
            energy,
            norm,
            tick.elapsed().as_secs_f64() * 1e3,
        );
        if !energy.is_finite() || energy > DIVERGENCE_FACTOR * e0.max(f64::MIN_POSITIVE) {
            trace.termination = Termination::Diverged;
            return Ok(StereoSolution { z, pose, trace });
        }
    }
    Ok(StereoSolution { z, pose, trace })
}

/// Wall time of a single learned iteration (features + forward pass +
/// update assembly) at the default initialization; scaling-study probe.
pub fn time_learned_iteration(instance: &StereoInstance, model: &MetaModel) -> Result<f64> {
    let net = model.as_conv()?;
    let (z, pose) = instance.default_init();
    let state = HiddenState::zeros(
        model,
        Some((instance.intrinsics.height, instance.intrinsics.width)),
    );
    let tick = Instant::now();
    let (r, _) = photometric_residuals(instance, &z, &pose);
    let sj = photometric_jacobian(instance, &z, &pose);
    let energy = 0.5 * r.dot(&r);
    let features = phi_dense(&sj, &r, energy, 0.0, 0.0)?;
    let (io, _) = conv_forward_step(net, &features, &state)?;
    std::hint::black_box(io.delta_pose);
    Ok(tick.elapsed().as_secs_f64() * 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{sample_instance, CurveFamily, CurveProblem, FamilyTag};
    use crate::learned::features::scale_compress;
    use crate::learned::DenseCell;
    use crate::linalg::DenseMatrix;
    use crate::rng::RngState;

    fn sine_problem(seed: u64) -> CurveProblem {
        let family = CurveFamily::standard(FamilyTag::Sine);
        CurveProblem::new(sample_instance(&family, &mut RngState::new(seed).derive(0)))
    }

    #[test]
    fn zero_output_projection_never_moves() {
        let mut rng = RngState::new(201);
        let model = MetaModel::dense(2, 8, 2, &mut rng);
        let problem = sine_problem(1);
        let x0 = problem.initial_guess();
        let trace = learned_solve(&problem, &model, &x0, 15, DEFAULT_EPSILON).unwrap();
        // Out projection is zero-initialized: delta is exactly zero.
        assert_eq!(trace.iterates.len(), 1);
        assert_eq!(trace.termination, Termination::StepTolerance);
        assert_eq!(trace.last_iterate().as_slice(), x0.as_slice());
    }

    #[test]
    fn n_zero_returns_only_x0() {
        let mut rng = RngState::new(202);
        let model = MetaModel::dense(2, 4, 1, &mut rng);
        let problem = sine_problem(2);
        let x0 = problem.initial_guess();
        let trace = learned_solve(&problem, &model, &x0, 0, DEFAULT_EPSILON).unwrap();
        assert_eq!(trace.iterates.len(), 1);
    }

    #[test]
    fn solve_is_deterministic() {
        let mut rng = RngState::new(203);
        let mut model = MetaModel::dense(2, 8, 2, &mut rng);
        // Give the output head nonzero weights so the solve actually moves.
        if let NetKind::Dense(net) = &mut model.net {
            let mut r = RngState::new(204);
            net.out_w = DenseMatrix::from_fn(2, 8, |_, _| r.uniform(-0.05, 0.05));
        }
        let problem = sine_problem(3);
        let x0 = problem.initial_guess();
        let a = learned_solve(&problem, &model, &x0, 10, DEFAULT_EPSILON).unwrap();
        let b = learned_solve(&problem, &model, &x0, 10, DEFAULT_EPSILON).unwrap();
        assert_eq!(a.iterates.len(), b.iterates.len());
        for (x, y) in a.iterates.iter().zip(&b.iterates) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
        assert!(a.iterates.len() > 1, "nonzero head should move");
    }

    #[test]
    fn hand_built_weights_emulate_gradient_step() {
        // One cell whose candidate gate reads the (compressed) Jᵀr feature
        // block scaled by mu; with zero weights elsewhere the cell output is
        // h' = 0.5·tanh(0.5·mu·s(Jᵀr)) ≈ 0.25·mu·s(Jᵀr) for small inputs,
        // so an output projection of -4·alpha/mu yields Δx ≈ -alpha·Jᵀr.
        let hidden = 2;
        let input_dim = 7 + 2;
        let mu = 1e-4;
        let alpha = 0.05;
        let mut w = DenseMatrix::zeros(4 * hidden, input_dim + hidden);
        // Candidate gate rows are 3H..4H; Jᵀr features sit at inputs 4, 5.
        w[(3 * hidden, 4)] = mu;
        w[(3 * hidden + 1, 5)] = mu;
        let cell = DenseCell {
            input_dim,
            hidden,
            w,
            b: DenseVector::zeros(4 * hidden),
        };
        let mut out_w = DenseMatrix::zeros(2, hidden);
        out_w[(0, 0)] = -4.0 * alpha / mu;
        out_w[(1, 1)] = -4.0 * alpha / mu;
        let net = DenseNet {
            feature_dim: 7,
            x_dim: 2,
            cells: vec![cell],
            out_w,
            out_b: DenseVector::zeros(2),
        };
        let model = MetaModel {
            version: crate::learned::MODEL_FORMAT_VERSION,
            net: NetKind::Dense(net),
        };
        let problem = sine_problem(4);
        let x = problem.initial_guess();
        let j = problem.jacobian(&x).unwrap();
        let r = problem.residuals(&x).unwrap();
        let jtr = j.atb(&r);
        let features = phi_small(&j, &r).unwrap();
        let state = HiddenState::zeros(&model, None);
        let (delta, _) = predict_update(&model, Features::Small(&features), &state, &x).unwrap();
        for k in 0..2 {
            let expect = -alpha * scale_compress(jtr[k]);
            assert!(
                (delta[k] - expect).abs() < 1e-6 * expect.abs().max(1e-3),
                "component {k}: {} vs {}",
                delta[k],
                expect
            );
            // And the compressed gradient tracks the raw gradient direction.
            assert_eq!(delta[k] > 0.0, -jtr[k] > 0.0);
        }
    }
}
