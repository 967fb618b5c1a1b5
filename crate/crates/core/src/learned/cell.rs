//! LSTM and convolutional-LSTM cell updates, with the reverse-mode rules the
//! trainer needs. Forward passes record everything backward passes consume.

use super::{ConvNet, DenseCell};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Multi-channel image tensor, layout [channel][row][col].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ChannelImage {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ChannelImage {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, v: usize, u: usize) -> f64 {
        self.data[(c * self.height + v) * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, c: usize, v: usize, u: usize, val: f64) {
        self.data[(c * self.height + v) * self.width + u] = val;
    }

    /// Flat pixel index access within a channel (row-major pixels).
    #[inline]
    pub fn get_flat(&self, c: usize, p: usize) -> f64 {
        self.data[c * self.pixels() + p]
    }

    #[inline]
    pub fn set_flat(&mut self, c: usize, p: usize, val: f64) {
        let n = self.pixels();
        self.data[c * n + p] = val;
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Stack two images channel-wise.
    pub fn concat(&self, other: &ChannelImage) -> ChannelImage {
        assert_eq!(self.height, other.height);
        assert_eq!(self.width, other.width);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        ChannelImage {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// 3x3 convolution kernel bank, layout [out_ch][in_ch][ky][kx].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub out_ch: usize,
    pub in_ch: usize,
    pub data: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        ConvKernel {
            out_ch,
            in_ch,
            data: vec![0.0; out_ch * in_ch * 9],
        }
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }

    #[inline]
    pub fn set(&mut self, o: usize, i: usize, ky: usize, kx: usize, val: f64) {
        self.data[((o * self.in_ch + i) * 3 + ky) * 3 + kx] = val;
    }
}

/// 3x3 convolution, zero padding, stride 1: out[o] = b[o] + Σ_i K[o][i] * in[i].
pub fn conv3x3(input: &ChannelImage, kernel: &ConvKernel, bias: &DenseVector) -> ChannelImage {
    assert_eq!(input.channels, kernel.in_ch, "conv input channels");
    assert_eq!(bias.len(), kernel.out_ch, "conv bias length");
    let (h, w) = (input.height, input.width);
    let mut out = ChannelImage::zeros(kernel.out_ch, h, w);
    for o in 0..kernel.out_ch {
        out.channel_mut(o).fill(bias[o]);
        for i in 0..kernel.in_ch {
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = kernel.get(o, i, ky, kx);
                    if k == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let v_lo = (-dy).max(0) as usize;
                    let v_hi = (h as isize - dy).min(h as isize) as usize;
                    for v in v_lo..v_hi {
                        let src_v = (v as isize + dy) as usize;
                        let u_lo = (-dx).max(0) as usize;
                        let u_hi = (w as isize - dx).min(w as isize) as usize;
                        let n = input.pixels();
                        let src = &input.data[i * n + src_v * w..i * n + (src_v + 1) * w];
                        let dsti = o * n + v * w;
                        let dst = &mut out.data[dsti..dsti + w];
                        for u in u_lo..u_hi {
                            dst[u] += k * src[(u as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reverse-mode rules for [`conv3x3`]: given d_out, accumulate d_kernel and
/// d_bias, and return d_input.
pub fn conv3x3_backward(
    input: &ChannelImage,
    kernel: &ConvKernel,
    d_out: &ChannelImage,
    d_kernel: &mut ConvKernel,
    d_bias: &mut DenseVector,
) -> ChannelImage {
    let (h, w) = (input.height, input.width);
    let mut d_input = ChannelImage::zeros(input.channels, h, w);
    for o in 0..kernel.out_ch {
        let d_sum: f64 = d_out.channel(o).iter().sum();
        d_bias[o] += d_sum;
        for i in 0..kernel.in_ch {
            for ky in 0..3 {
                for kx in 0..3 {
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let k = kernel.get(o, i, ky, kx);
                    let mut dk = 0.0;
                    let v_lo = (-dy).max(0) as usize;
                    let v_hi = (h as isize - dy).min(h as isize) as usize;
                    for v in v_lo..v_hi {
                        let src_v = (v as isize + dy) as usize;
                        let u_lo = (-dx).max(0) as usize;
                        let u_hi = (w as isize - dx).min(w as isize) as usize;
                        for u in u_lo..u_hi {
                            let src_u = (u as isize + dx) as usize;
                            let g = d_out.get(o, v, u);
                            dk += g * input.get(i, src_v, src_u);
                            d_input.set(i, src_v, src_u, d_input.get(i, src_v, src_u) + k * g);
                        }
                    }
                    d_kernel.set(o, i, ky, kx, d_kernel.get(o, i, ky, kx) + dk);
                }
            }
        }
    }
    d_input
}

/// Recorded forward pass of one dense LSTM cell step.
#[derive(Debug, Clone)]
pub struct CellIo {
    pub input: DenseVector,
    pub h_prev: DenseVector,
    pub c_prev: DenseVector,
    /// Post-activation gates.
    pub gate_i: DenseVector,
    pub gate_f: DenseVector,
    pub gate_o: DenseVector,
    pub gate_g: DenseVector,
    pub c_new: DenseVector,
    pub tanh_c_new: DenseVector,
    pub h_new: DenseVector,
}

/// Standard LSTM gate equations:
/// i = σ(W_i·[input,h]+b_i), f = σ(W_f·..), o = σ(W_o·..), g = tanh(W_g·..),
/// c' = f⊙c + i⊙g, h' = o⊙tanh(c').
pub fn lstm_cell(
    input: &DenseVector,
    h_prev: &DenseVector,
    c_prev: &DenseVector,
    cell: &DenseCell,
) -> Result<CellIo> {
    if input.len() != cell.input_dim {
        return Err(Error::ShapeMismatch {
            context: "lstm_cell input",
            expected: cell.input_dim.to_string(),
            got: input.len().to_string(),
        });
    }
    if h_prev.len() != cell.hidden || c_prev.len() != cell.hidden {
        return Err(Error::ShapeMismatch {
            context: "lstm_cell state",
            expected: cell.hidden.to_string(),
            got: format!("h={}, c={}", h_prev.len(), c_prev.len()),
        });
    }
    let hidden = cell.hidden;
    let mut concat = Vec::with_capacity(cell.input_dim + hidden);
    concat.extend_from_slice(input.as_slice());
    concat.extend_from_slice(h_prev.as_slice());
    let concat = DenseVector::from_vec(concat);
    let mut z = cell.w.matvec(&concat);
    for (zi, bi) in z.as_mut_slice().iter_mut().zip(cell.b.as_slice()) {
        *zi += bi;
    }
    let zs = z.as_slice();
    let mut gate_i = DenseVector::zeros(hidden);
    let mut gate_f = DenseVector::zeros(hidden);
    let mut gate_o = DenseVector::zeros(hidden);
    let mut gate_g = DenseVector::zeros(hidden);
    for k in 0..hidden {
        gate_i[k] = sigmoid(zs[k]);
        gate_f[k] = sigmoid(zs[hidden + k]);
        gate_o[k] = sigmoid(zs[2 * hidden + k]);
        gate_g[k] = zs[3 * hidden + k].tanh();
    }
    let mut c_new = DenseVector::zeros(hidden);
    let mut tanh_c_new = DenseVector::zeros(hidden);
    let mut h_new = DenseVector::zeros(hidden);
    for k in 0..hidden {
        c_new[k] = gate_f[k] * c_prev[k] + gate_i[k] * gate_g[k];
        tanh_c_new[k] = c_new[k].tanh();
        h_new[k] = gate_o[k] * tanh_c_new[k];
    }
    Ok(CellIo {
        input: input.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gate_i,
        gate_f,
        gate_o,
        gate_g,
        c_new,
        tanh_c_new,
        h_new,
    })
}

/// Reverse-mode pass of [`lstm_cell`]. Accumulates the weight/bias gradients
/// and returns (d_input, d_h_prev, d_c_prev).
pub fn lstm_cell_backward(
    io: &CellIo,
    cell: &DenseCell,
    d_h_new: &DenseVector,
    d_c_new: &DenseVector,
    d_w: &mut DenseMatrix,
    d_b: &mut DenseVector,
) -> (DenseVector, DenseVector, DenseVector) {
    let hidden = cell.hidden;
    let mut dz = DenseVector::zeros(4 * hidden);
    let mut d_c_prev = DenseVector::zeros(hidden);
    for k in 0..hidden {
        let tc = io.tanh_c_new[k];
        let d_c_total = d_c_new[k] + d_h_new[k] * io.gate_o[k] * (1.0 - tc * tc);
        let d_o = d_h_new[k] * tc;
        let d_f = d_c_total * io.c_prev[k];
        let d_i = d_c_total * io.gate_g[k];
        let d_g = d_c_total * io.gate_i[k];
        d_c_prev[k] = d_c_total * io.gate_f[k];
        let (i, f, o, g) = (io.gate_i[k], io.gate_f[k], io.gate_o[k], io.gate_g[k]);
        dz[k] = d_i * i * (1.0 - i);
        dz[hidden + k] = d_f * f * (1.0 - f);
        dz[2 * hidden + k] = d_o * o * (1.0 - o);
        dz[3 * hidden + k] = d_g * (1.0 - g * g);
    }
    let in_dim = cell.input_dim;
    let mut concat = Vec::with_capacity(in_dim + hidden);
    concat.extend_from_slice(io.input.as_slice());
    concat.extend_from_slice(io.h_prev.as_slice());
    // dW += dz ⊗ concat; db += dz; d_concat = Wᵀ dz.
    let mut d_concat = vec![0.0; in_dim + hidden];
    for row in 0..4 * hidden {
        let dzr = dz[row];
        d_b[row] += dzr;
        if dzr != 0.0 {
            let wrow = cell.w.row(row);
            let drow = d_w.row_mut(row);
            for c in 0..in_dim + hidden {
                drow[c] += dzr * concat[c];
                d_concat[c] += dzr * wrow[c];
            }
        } else {
            let wrow = cell.w.row(row);
            for c in 0..in_dim + hidden {
                d_concat[c] += dzr * wrow[c];
            }
        }
    }
    let d_input = DenseVector::from_vec(d_concat[..in_dim].to_vec());
    let d_h_prev = DenseVector::from_vec(d_concat[in_dim..].to_vec());
    (d_input, d_h_prev, d_c_prev)
}

/// Recorded forward pass of one conv-LSTM step.
#[derive(Debug, Clone)]
pub struct ConvCellIo {
    /// Cell input (feature channels + broadcast globals), without hidden.
    pub input: ChannelImage,
    pub h_prev: ChannelImage,
    pub c_prev: ChannelImage,
    pub gate_i: ChannelImage,
    pub gate_f: ChannelImage,
    pub gate_o: ChannelImage,
    pub gate_g: ChannelImage,
    pub c_new: ChannelImage,
    pub tanh_c_new: ChannelImage,
    pub h_new: ChannelImage,
}

/// Conv-LSTM update: the gate equations of [`lstm_cell`] with the matrix
/// products replaced by 3x3 zero-padded convolutions over [input, h].
pub fn conv_lstm_cell(
    input: &ChannelImage,
    h_prev: &ChannelImage,
    c_prev: &ChannelImage,
    net: &ConvNet,
) -> Result<ConvCellIo> {
    if input.channels != net.in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv_lstm_cell input channels",
            expected: net.in_channels.to_string(),
            got: input.channels.to_string(),
        });
    }
    if h_prev.channels != net.channels
        || h_prev.height != input.height
        || h_prev.width != input.width
    {
        return Err(Error::ShapeMismatch {
            context: "conv_lstm_cell state",
            expected: format!("{}x{}x{}", net.channels, input.height, input.width),
            got: format!("{}x{}x{}", h_prev.channels, h_prev.height, h_prev.width),
        });
    }
    let ch = net.channels;
    let stacked = input.concat(h_prev);
    let z = conv3x3(&stacked, &net.kernel, &net.bias);
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let mut gate_i = ChannelImage::zeros(ch, h, w);
    let mut gate_f = ChannelImage::zeros(ch, h, w);
    let mut gate_o = ChannelImage::zeros(ch, h, w);
    let mut gate_g = ChannelImage::zeros(ch, h, w);
    let mut c_new = ChannelImage::zeros(ch, h, w);
    let mut tanh_c_new = ChannelImage::zeros(ch, h, w);
    let mut h_new = ChannelImage::zeros(ch, h, w);
    for c in 0..ch {
        for p in 0..n {
            let zi = z.get_flat(c, p);
            let zf = z.get_flat(ch + c, p);
            let zo = z.get_flat(2 * ch + c, p);
            let zg = z.get_flat(3 * ch + c, p);
            let i = sigmoid(zi);
            let f = sigmoid(zf);
            let o = sigmoid(zo);
            let g = zg.tanh();
            let cn = f * c_prev.get_flat(c, p) + i * g;
            let tc = cn.tanh();
            gate_i.set_flat(c, p, i);
            gate_f.set_flat(c, p, f);
            gate_o.set_flat(c, p, o);
            gate_g.set_flat(c, p, g);
            c_new.set_flat(c, p, cn);
            tanh_c_new.set_flat(c, p, tc);
            h_new.set_flat(c, p, o * tc);
        }
    }
    Ok(ConvCellIo {
        input: input.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gate_i,
        gate_f,
        gate_o,
        gate_g,
        c_new,
        tanh_c_new,
        h_new,
    })
}

/// Reverse-mode pass of [`conv_lstm_cell`]. Accumulates kernel/bias
/// gradients and returns (d_h_prev, d_c_prev); the gradient with respect to
/// the feature input is discarded by callers (features are stop-gradient).
pub fn conv_lstm_cell_backward(
    io: &ConvCellIo,
    net: &ConvNet,
    d_h_new: &ChannelImage,
    d_c_new: &ChannelImage,
    d_kernel: &mut ConvKernel,
    d_bias: &mut DenseVector,
) -> (ChannelImage, ChannelImage) {
    let ch = net.channels;
    let (h, w) = (io.input.height, io.input.width);
    let n = h * w;
    let mut dz = ChannelImage::zeros(4 * ch, h, w);
    let mut d_c_prev = ChannelImage::zeros(ch, h, w);
    for c in 0..ch {
        for p in 0..n {
            let tc = io.tanh_c_new.get_flat(c, p);
            let o = io.gate_o.get_flat(c, p);
            let d_c_total = d_c_new.get_flat(c, p) + d_h_new.get_flat(c, p) * o * (1.0 - tc * tc);
            let d_o = d_h_new.get_flat(c, p) * tc;
            let i = io.gate_i.get_flat(c, p);
            let f = io.gate_f.get_flat(c, p);
            let g = io.gate_g.get_flat(c, p);
            let d_f = d_c_total * io.c_prev.get_flat(c, p);
            let d_i = d_c_total * g;
            let d_g = d_c_total * i;
            d_c_prev.set_flat(c, p, d_c_total * f);
            dz.set_flat(c, p, d_i * i * (1.0 - i));
            dz.set_flat(ch + c, p, d_f * f * (1.0 - f));
            dz.set_flat(2 * ch + c, p, d_o * o * (1.0 - o));
            dz.set_flat(3 * ch + c, p, d_g * (1.0 - g * g));
        }
    }
    let stacked = io.input.concat(&io.h_prev);
    let d_stacked = conv3x3_backward(&stacked, &net.kernel, &dz, d_kernel, d_bias);
    // Split the stacked gradient; the input part is dropped by the caller.
    let feat_ch = io.input.channels;
    let mut d_h_prev = ChannelImage::zeros(ch, h, w);
    d_h_prev
        .data
        .copy_from_slice(&d_stacked.data[feat_ch * n..]);
    (d_h_prev, d_c_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learned::{DenseNet, MetaModel, NetKind};
    use crate::rng::RngState;

    fn random_vec(len: usize, rng: &mut RngState) -> DenseVector {
        DenseVector::from_vec((0..len).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn zero_parameters_halve_cell_state() {
        // All weights and biases zero: i = f = o = 0.5, g = 0, so
        // c' = 0.5 c and h' = 0.5 tanh(0.5 c).
        let cell = DenseCell {
            input_dim: 3,
            hidden: 4,
            w: DenseMatrix::zeros(16, 7),
            b: DenseVector::zeros(16),
        };
        let mut rng = RngState::new(11);
        let input = random_vec(3, &mut rng);
        let c_prev = random_vec(4, &mut rng);
        let h_prev = random_vec(4, &mut rng);
        let io = lstm_cell(&input, &h_prev, &c_prev, &cell).unwrap();
        for k in 0..4 {
            assert!((io.c_new[k] - 0.5 * c_prev[k]).abs() < 1e-15);
            assert!((io.h_new[k] - 0.5 * (0.5 * c_prev[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_zero_state_closed_form() {
        // h' = σ(b_o) ⊙ tanh(σ(b_i) ⊙ tanh(b_g)).
        let mut rng = RngState::new(13);
        let hidden = 5;
        let cell = DenseCell {
            input_dim: 2,
            hidden,
            w: DenseMatrix::from_fn(4 * hidden, 2 + hidden, |_, _| rng.uniform(-1.0, 1.0)),
            b: random_vec(4 * hidden, &mut rng),
        };
        let io = lstm_cell(
            &DenseVector::zeros(2),
            &DenseVector::zeros(hidden),
            &DenseVector::zeros(hidden),
            &cell,
        )
        .unwrap();
        for k in 0..hidden {
            let bi = cell.b[k];
            let bo = cell.b[2 * hidden + k];
            let bg = cell.b[3 * hidden + k];
            let expect = sigmoid(bo) * (sigmoid(bi) * bg.tanh()).tanh();
            assert!((io.h_new[k] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        // Independent per-element reference implementation.
        let mut rng = RngState::new(17);
        let (in_dim, hidden) = (4, 3);
        let cell = DenseCell {
            input_dim: in_dim,
            hidden,
            w: DenseMatrix::from_fn(4 * hidden, in_dim + hidden, |_, _| rng.uniform(-1.0, 1.0)),
            b: random_vec(4 * hidden, &mut rng),
        };
        let input = random_vec(in_dim, &mut rng);
        let h_prev = random_vec(hidden, &mut rng);
        let c_prev = random_vec(hidden, &mut rng);
        let io = lstm_cell(&input, &h_prev, &c_prev, &cell).unwrap();
        for k in 0..hidden {
            let mut acc = [0.0; 4];
            for (gate, a) in acc.iter_mut().enumerate() {
                let row = gate * hidden + k;
                for j in 0..in_dim {
                    *a += cell.w.get(row, j) * input[j];
                }
                for j in 0..hidden {
                    *a += cell.w.get(row, in_dim + j) * h_prev[j];
                }
                *a += cell.b[row];
            }
            let i = 1.0 / (1.0 + (-acc[0]).exp());
            let f = 1.0 / (1.0 + (-acc[1]).exp());
            let o = 1.0 / (1.0 + (-acc[2]).exp());
            let g = acc[3].tanh();
            let c = f * c_prev[k] + i * g;
            let h = o * c.tanh();
            assert!((io.c_new[k] - c).abs() < 1e-14);
            assert!((io.h_new[k] - h).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = RngState::new(19);
        let input = ChannelImage {
            channels: 2,
            height: 6,
            width: 8,
            data: (0..2 * 6 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let mut kernel = ConvKernel::zeros(3, 2);
        for v in kernel.data.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let bias = random_vec(3, &mut rng);
        let out = conv3x3(&input, &kernel, &bias);
        for o in 0..3 {
            for v in 0..6_usize {
                for u in 0..8_usize {
                    let mut acc = bias[o];
                    for i in 0..2 {
                        for ky in 0..3_isize {
                            for kx in 0..3_isize {
                                let sv = v as isize + ky - 1;
                                let su = u as isize + kx - 1;
                                if sv < 0 || su < 0 || sv >= 6 || su >= 8 {
                                    continue;
                                }
                                acc += kernel.get(o, i, ky as usize, kx as usize)
                                    * input.get(i, sv as usize, su as usize);
                            }
                        }
                    }
                    assert!((out.get(o, v, u) - acc).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn conv_cell_on_1x1_matches_dense_cell() {
        // With a 1x1 image, the zero-padded convolution reduces to the
        // center tap; a dense cell built from those taps must agree.
        let mut rng = RngState::new(23);
        let model = MetaModel::conv(4, &mut rng);
        let net = match &model.net {
            NetKind::Conv(n) => n,
            _ => unreachable!(),
        };
        let ch = net.channels;
        let in_ch = net.in_channels;
        let input = ChannelImage {
            channels: in_ch,
            height: 1,
            width: 1,
            data: (0..in_ch).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let h_prev = ChannelImage {
            channels: ch,
            height: 1,
            width: 1,
            data: (0..ch).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let c_prev = ChannelImage {
            channels: ch,
            height: 1,
            width: 1,
            data: (0..ch).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let conv_io = conv_lstm_cell(&input, &h_prev, &c_prev, net).unwrap();

        let dense_cell = DenseCell {
            input_dim: in_ch,
            hidden: ch,
            w: DenseMatrix::from_fn(4 * ch, in_ch + ch, |r, c| net.kernel.get(r, c, 1, 1)),
            b: net.bias.clone(),
        };
        let dense_io = lstm_cell(
            &DenseVector::from_vec(input.data.clone()),
            &DenseVector::from_vec(h_prev.data.clone()),
            &DenseVector::from_vec(c_prev.data.clone()),
            &dense_cell,
        )
        .unwrap();
        for k in 0..ch {
            assert!((conv_io.h_new.get_flat(k, 0) - dense_io.h_new[k]).abs() < 1e-12);
            assert!((conv_io.c_new.get_flat(k, 0) - dense_io.c_new[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_cell_translation_equivariant_on_constant_input() {
        // Spatially constant input and state keep the interior output
        // constant (borders differ from zero padding).
        let mut rng = RngState::new(29);
        let model = MetaModel::conv(3, &mut rng);
        let net = match &model.net {
            NetKind::Conv(n) => n,
            _ => unreachable!(),
        };
        let mut input = ChannelImage::zeros(net.in_channels, 7, 9);
        for c in 0..net.in_channels {
            let val = rng.uniform(-1.0, 1.0);
            input.channel_mut(c).fill(val);
        }
        let mut h_prev = ChannelImage::zeros(3, 7, 9);
        let mut c_prev = ChannelImage::zeros(3, 7, 9);
        for c in 0..3 {
            h_prev.channel_mut(c).fill(rng.uniform(-0.5, 0.5));
            c_prev.channel_mut(c).fill(rng.uniform(-0.5, 0.5));
        }
        let io = conv_lstm_cell(&input, &h_prev, &c_prev, net).unwrap();
        for c in 0..3 {
            let center = io.h_new.get(c, 3, 4);
            for v in 1..6 {
                for u in 1..8 {
                    assert!((io.h_new.get(c, v, u) - center).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dense_cell_backward_matches_finite_differences() {
        let mut rng = RngState::new(31);
        let (in_dim, hidden) = (3, 2);
        let cell = DenseCell {
            input_dim: in_dim,
            hidden,
            w: DenseMatrix::from_fn(4 * hidden, in_dim + hidden, |_, _| rng.uniform(-0.8, 0.8)),
            b: random_vec(4 * hidden, &mut rng),
        };
        let input = random_vec(in_dim, &mut rng);
        let h_prev = random_vec(hidden, &mut rng);
        let c_prev = random_vec(hidden, &mut rng);
        // Scalar objective: weighted sum of h_new and c_new.
        let wh = random_vec(hidden, &mut rng);
        let wc = random_vec(hidden, &mut rng);
        let eval = |cell: &DenseCell, input: &DenseVector, h: &DenseVector, c: &DenseVector| {
            let io = lstm_cell(input, h, c, cell).unwrap();
            io.h_new.dot(&wh) + io.c_new.dot(&wc)
        };
        let io = lstm_cell(&input, &h_prev, &c_prev, &cell).unwrap();
        let mut d_w = DenseMatrix::zeros(4 * hidden, in_dim + hidden);
        let mut d_b = DenseVector::zeros(4 * hidden);
        let (d_input, d_h_prev, d_c_prev) =
            lstm_cell_backward(&io, &cell, &wh, &wc, &mut d_w, &mut d_b);
        let h = 1e-6;
        // Weights.
        for r in 0..4 * hidden {
            for c in 0..in_dim + hidden {
                let mut pert = cell.clone();
                pert.w[(r, c)] += h;
                let up = eval(&pert, &input, &h_prev, &c_prev);
                pert.w[(r, c)] -= 2.0 * h;
                let down = eval(&pert, &input, &h_prev, &c_prev);
                let fd = (up - down) / (2.0 * h);
                assert!((d_w.get(r, c) - fd).abs() < 1e-6, "w({r},{c})");
            }
        }
        // Inputs and states.
        for k in 0..in_dim {
            let mut p = input.clone();
            p[k] += h;
            let up = eval(&cell, &p, &h_prev, &c_prev);
            p[k] -= 2.0 * h;
            let down = eval(&cell, &p, &h_prev, &c_prev);
            assert!((d_input[k] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
        for k in 0..hidden {
            let mut p = h_prev.clone();
            p[k] += h;
            let up = eval(&cell, &input, &p, &c_prev);
            p[k] -= 2.0 * h;
            let down = eval(&cell, &input, &p, &c_prev);
            assert!((d_h_prev[k] - (up - down) / (2.0 * h)).abs() < 1e-6);
            let mut p = c_prev.clone();
            p[k] += h;
            let up = eval(&cell, &input, &h_prev, &p);
            p[k] -= 2.0 * h;
            let down = eval(&cell, &input, &h_prev, &p);
            assert!((d_c_prev[k] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = RngState::new(37);
        let input = ChannelImage {
            channels: 2,
            height: 3,
            width: 4,
            data: (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        };
        let mut kernel = ConvKernel::zeros(2, 2);
        for v in kernel.data.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let bias = random_vec(2, &mut rng);
        // Objective: weighted sum of conv output.
        let wsum: Vec<f64> = (0..2 * 12).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let eval = |input: &ChannelImage, kernel: &ConvKernel, bias: &DenseVector| {
            let out = conv3x3(input, kernel, bias);
            out.data.iter().zip(&wsum).map(|(a, b)| a * b).sum::<f64>()
        };
        let d_out = ChannelImage {
            channels: 2,
            height: 3,
            width: 4,
            data: wsum.clone(),
        };
        let mut d_kernel = ConvKernel::zeros(2, 2);
        let mut d_bias = DenseVector::zeros(2);
        let d_input = conv3x3_backward(&input, &kernel, &d_out, &mut d_kernel, &mut d_bias);
        let h = 1e-6;
        for idx in 0..kernel.data.len() {
            let mut pert = kernel.clone();
            pert.data[idx] += h;
            let up = eval(&input, &pert, &bias);
            pert.data[idx] -= 2.0 * h;
            let down = eval(&input, &pert, &bias);
            assert!((d_kernel.data[idx] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
        for idx in 0..input.data.len() {
            let mut pert = input.clone();
            pert.data[idx] += h;
            let up = eval(&pert, &kernel, &bias);
            pert.data[idx] -= 2.0 * h;
            let down = eval(&pert, &kernel, &bias);
            assert!((d_input.data[idx] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
    }
}
