//! The learned recurrent optimizer: feature transform, LSTM / conv-LSTM
//! update predictor, the solve loop, and model (de)serialization.

pub mod cell;
pub mod features;
pub mod solve;

use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::RngState;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub use cell::{conv_lstm_cell, lstm_cell, CellIo, ChannelImage, ConvCellIo, ConvKernel};
pub use features::{
    phi_dense, phi_small, scale_compress, scale_decompress, FeatureImage, FeatureVector,
    GLOBAL_FEATURES, PIXEL_CHANNELS,
};
pub use solve::{learned_solve, predict_update, HiddenState};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One LSTM cell's parameters. Gate order in the stacked weight matrix is
/// input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseCell {
    pub input_dim: usize,
    pub hidden: usize,
    /// 4*hidden x (input_dim + hidden).
    pub w: DenseMatrix,
    /// 4*hidden.
    pub b: DenseVector,
}

impl DenseCell {
    fn init(input_dim: usize, hidden: usize, rng: &mut RngState) -> Self {
        let fan_in = input_dim + hidden;
        let r = 1.0 / (fan_in as f64).sqrt();
        let w = DenseMatrix::from_fn(4 * hidden, fan_in, |_, _| rng.uniform(-r, r));
        let mut b = DenseVector::zeros(4 * hidden);
        // Forget-gate bias starts at +1 so early cell state is retained.
        for i in hidden..2 * hidden {
            b[i] = 1.0;
        }
        DenseCell { input_dim, hidden, w, b }
    }
}

/// Dense variant: stacked LSTM cells over the fixed-length feature vector
/// plus the current parameters, with a linear output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    /// dim_x² + dim_x + 1.
    pub feature_dim: usize,
    pub x_dim: usize,
    pub cells: Vec<DenseCell>,
    /// x_dim x hidden of the top cell; zero-initialized so the optimizer
    /// starts as the identity mapping.
    pub out_w: DenseMatrix,
    pub out_b: DenseVector,
}

impl DenseNet {
    pub fn init(x_dim: usize, hidden: usize, num_cells: usize, rng: &mut RngState) -> Self {
        let feature_dim = x_dim * x_dim + x_dim + 1;
        let mut cells = Vec::with_capacity(num_cells);
        let mut input_dim = feature_dim + x_dim;
        for _ in 0..num_cells {
            cells.push(DenseCell::init(input_dim, hidden, rng));
            input_dim = hidden;
        }
        DenseNet {
            feature_dim,
            x_dim,
            cells,
            out_w: DenseMatrix::zeros(x_dim, hidden),
            out_b: DenseVector::zeros(x_dim),
        }
    }
}

/// Convolutional variant for per-pixel problems: a single conv-LSTM cell on
/// the feature image (with the global feature vector broadcast as constant
/// channels), a 1x1 projection for per-pixel depth updates and a pooled
/// linear head for the 6 pose updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    /// Feature-image channels plus broadcast global channels.
    pub in_channels: usize,
    /// Hidden/cell channels.
    pub channels: usize,
    /// (4*channels) x (in_channels + channels) x 3 x 3.
    pub kernel: ConvKernel,
    /// 4*channels.
    pub bias: DenseVector,
    /// 1x1 depth projection (zero-initialized).
    pub depth_w: DenseVector,
    pub depth_b: f64,
    /// 6 x channels pooled pose head (zero-initialized).
    pub pose_w: DenseMatrix,
    pub pose_b: DenseVector,
}

impl ConvNet {
    pub fn init(channels: usize, rng: &mut RngState) -> Self {
        let in_channels = PIXEL_CHANNELS + GLOBAL_FEATURES;
        let fan_in = (in_channels + channels) * 9;
        let r = 1.0 / (fan_in as f64).sqrt();
        let mut kernel = ConvKernel::zeros(4 * channels, in_channels + channels);
        for v in kernel.data.iter_mut() {
            *v = rng.uniform(-r, r);
        }
        let mut bias = DenseVector::zeros(4 * channels);
        for i in channels..2 * channels {
            bias[i] = 1.0;
        }
        ConvNet {
            in_channels,
            channels,
            kernel,
            bias,
            depth_w: DenseVector::zeros(channels),
            depth_b: 0.0,
            pose_w: DenseMatrix::zeros(6, channels),
            pose_b: DenseVector::zeros(6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum NetKind {
    Dense(DenseNet),
    Conv(ConvNet),
}

/// Parameters of the learned optimizer plus format version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub version: u32,
    pub net: NetKind,
}

impl MetaModel {
    pub fn dense(x_dim: usize, hidden: usize, num_cells: usize, rng: &mut RngState) -> Self {
        MetaModel {
            version: MODEL_FORMAT_VERSION,
            net: NetKind::Dense(DenseNet::init(x_dim, hidden, num_cells, rng)),
        }
    }

    pub fn conv(channels: usize, rng: &mut RngState) -> Self {
        MetaModel {
            version: MODEL_FORMAT_VERSION,
            net: NetKind::Conv(ConvNet::init(channels, rng)),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.net, NetKind::Dense(_))
    }

    pub fn as_dense(&self) -> Result<&DenseNet> {
        match &self.net {
            NetKind::Dense(n) => Ok(n),
            NetKind::Conv(_) => Err(Error::ShapeMismatch {
                context: "model variant",
                expected: "dense".into(),
                got: "conv".into(),
            }),
        }
    }

    pub fn as_conv(&self) -> Result<&ConvNet> {
        match &self.net {
            NetKind::Conv(n) => Ok(n),
            NetKind::Dense(_) => Err(Error::ShapeMismatch {
                context: "model variant",
                expected: "conv".into(),
                got: "dense".into(),
            }),
        }
    }

    /// Ordered views of every parameter tensor. The order defines the
    /// flattened layout used by the outer optimizer.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        match &self.net {
            NetKind::Dense(n) => {
                let mut out = Vec::new();
                for c in &n.cells {
                    out.push(c.w.data());
                    out.push(c.b.as_slice());
                }
                out.push(n.out_w.data());
                out.push(n.out_b.as_slice());
                out
            }
            NetKind::Conv(n) => vec![
                n.kernel.data.as_slice(),
                n.bias.as_slice(),
                n.depth_w.as_slice(),
                std::slice::from_ref(&n.depth_b),
                n.pose_w.data(),
                n.pose_b.as_slice(),
            ],
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.net {
            NetKind::Dense(n) => {
                let mut out = Vec::new();
                for c in &mut n.cells {
                    out.push(c.w.data_mut());
                    out.push(c.b.as_mut_slice());
                }
                out.push(n.out_w.data_mut());
                out.push(n.out_b.as_mut_slice());
                out
            }
            NetKind::Conv(n) => vec![
                n.kernel.data.as_mut_slice(),
                n.bias.as_mut_slice(),
                n.depth_w.as_mut_slice(),
                std::slice::from_mut(&mut n.depth_b),
                n.pose_w.data_mut(),
                n.pose_b.as_mut_slice(),
            ],
        }
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        }
        assert_eq!(pos, flat.len(), "flat parameter length");
    }

    /// Zeroed structural clone, used as a gradient accumulator.
    pub fn zeros_like(&self) -> MetaModel {
        let mut m = self.clone();
        for s in m.param_slices_mut() {
            s.fill(0.0);
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Write the model as a versioned JSON document: shape metadata plus flat
/// numeric arrays per tensor. serde_json emits shortest round-trip decimals,
/// so doubles survive save/load bit-exactly.
pub fn save_model(model: &MetaModel, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), model)
        .map_err(|e| Error::CorruptFile(format!("serialize: {e}")))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MetaModel> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptFile(format!("{}: {e}", path.display())))?;
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptFile(format!("{}: missing version tag", path.display())))?;
    if found != MODEL_FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: found as u32,
        });
    }
    let model: MetaModel = serde_json::from_value(value)
        .map_err(|e| Error::CorruptFile(format!("{}: {e}", path.display())))?;
    if !model.all_finite() {
        return Err(Error::CorruptFile(format!(
            "{}: non-finite parameters",
            path.display()
        )));
    }
    Ok(model)
}
