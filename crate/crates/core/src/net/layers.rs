//! Layer primitives. Convolutions accumulate bias first, then input channel,
//! kernel row and kernel column in ascending order, so every output element
//! has a fixed summation order regardless of tiling.

use super::Tensor;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Leaky,
    Linear,
}

/// Convolution parameters: kernel `c_out x c_in x k x k` and bias `c_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvWeights {
            c_out,
            c_in,
            k,
            kernel: vec![0.0; c_out * c_in * k * k],
            bias: vec![0.0; c_out],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.kernel.len() != self.c_out * self.c_in * self.k * self.k || self.bias.len() != self.c_out {
            return Err(Error::Shape(format!(
                "conv weights {}x{}x{}x{} hold {} kernel and {} bias values",
                self.c_out,
                self.c_in,
                self.k,
                self.k,
                self.kernel.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Lays out every `k x k` receptive field as a column: row `(ic*k + ky)*k + kx`
/// holds the zero-padded input sample for each output position.
fn im2col(x: &Tensor, k: usize, stride: usize, oh: usize, ow: usize) -> Vec<f32> {
    let (c, h, w) = x.shape();
    let pad = (k / 2) as isize;
    let n = oh * ow;
    let mut cols = vec![0.0f32; c * k * k * n];
    for ic in 0..c {
        let plane = x.plane(ic);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ic * k + ky) * k + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

const TILE: usize = 256;
const OC_BLOCK: usize = 4;

/// Same-padded cross-correlation with a raw kernel slice laid out
/// `c_out x c_in x k x k`. `bias` may be empty (treated as zeros).
pub(crate) fn conv_raw(
    x: &Tensor,
    kernel: &[f32],
    bias: &[f32],
    c_out: usize,
    k: usize,
    stride: usize,
    activation: Activation,
) -> Result<Tensor> {
    let (c_in, h, w) = x.shape();
    if k % 2 == 0 {
        return Err(Error::Shape(format!("kernel size {k} is not odd")));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be at least 1".into()));
    }
    let depth = c_in * k * k;
    if kernel.len() != c_out * depth {
        return Err(Error::Shape(format!(
            "kernel has {} values, expected {c_out}x{c_in}x{k}x{k}",
            kernel.len()
        )));
    }
    if !bias.is_empty() && bias.len() != c_out {
        return Err(Error::Shape(format!("bias has {} values, expected {c_out}", bias.len())));
    }
    let oh = h.div_ceil(stride);
    let ow = w.div_ceil(stride);
    let n = oh * ow;
    let owned;
    let cols: &[f32] = if k == 1 && stride == 1 {
        x.data()
    } else {
        owned = im2col(x, k, stride, oh, ow);
        &owned
    };

    let mut out = Tensor::zeros(c_out, oh, ow);
    let data = out.data_mut();
    let mut acc = [[0.0f32; TILE]; OC_BLOCK];
    for s0 in (0..n).step_by(TILE) {
        let len = TILE.min(n - s0);
        for oc0 in (0..c_out).step_by(OC_BLOCK) {
            let block = OC_BLOCK.min(c_out - oc0);
            for b in 0..block {
                let init = if bias.is_empty() { 0.0 } else { bias[oc0 + b] };
                acc[b][..len].fill(init);
            }
            if block == OC_BLOCK {
                let w0 = &kernel[oc0 * depth..][..depth];
                let w1 = &kernel[(oc0 + 1) * depth..][..depth];
                let w2 = &kernel[(oc0 + 2) * depth..][..depth];
                let w3 = &kernel[(oc0 + 3) * depth..][..depth];
                let [a0, a1, a2, a3] = &mut acc;
                let (a0, a1, a2, a3) = (&mut a0[..len], &mut a1[..len], &mut a2[..len], &mut a3[..len]);
                for j in 0..depth {
                    let col = &cols[j * n + s0..][..len];
                    let (k0, k1, k2, k3) = (w0[j], w1[j], w2[j], w3[j]);
                    for i in 0..len {
                        let c = col[i];
                        a0[i] += k0 * c;
                        a1[i] += k1 * c;
                        a2[i] += k2 * c;
                        a3[i] += k3 * c;
                    }
                }
            } else {
                for b in 0..block {
                    let wk = &kernel[(oc0 + b) * depth..][..depth];
                    let a = &mut acc[b][..len];
                    for (j, &kv) in wk.iter().enumerate() {
                        let col = &cols[j * n + s0..][..len];
                        for (av, &c) in a.iter_mut().zip(col) {
                            *av += kv * c;
                        }
                    }
                }
            }
            for b in 0..block {
                let dst = &mut data[(oc0 + b) * n + s0..][..len];
                match activation {
                    Activation::Linear => dst.copy_from_slice(&acc[b][..len]),
                    Activation::Leaky => {
                        for (d, &v) in dst.iter_mut().zip(&acc[b][..len]) {
                            *d = if v > 0.0 { v } else { LEAKY_SLOPE * v };
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d(x: &Tensor, weights: &ConvWeights, stride: usize, activation: Activation) -> Result<Tensor> {
    weights.check()?;
    if weights.c_in != x.channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            weights.c_in,
            x.channels()
        )));
    }
    conv_raw(x, &weights.kernel, &weights.bias, weights.c_out, weights.k, stride, activation)
}

/// `k = 2` max pooling. Stride 2 halves even inputs; stride 1 keeps the size
/// by replicating the last row and column.
pub fn maxpool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    if k != 2 {
        return Err(Error::Shape(format!("only 2x2 pooling is supported, got {k}")));
    }
    let (c, h, w) = x.shape();
    match stride {
        2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Shape(format!("stride-2 pooling needs even sizes, got {h}x{w}")));
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Tensor::zeros(c, oh, ow);
            for ch in 0..c {
                let src = x.plane(ch);
                let dst = out.plane_mut(ch);
                for oy in 0..oh {
                    let r0 = &src[2 * oy * w..][..w];
                    let r1 = &src[(2 * oy + 1) * w..][..w];
                    for ox in 0..ow {
                        dst[oy * ow + ox] = r0[2 * ox].max(r0[2 * ox + 1]).max(r1[2 * ox]).max(r1[2 * ox + 1]);
                    }
                }
            }
            Ok(out)
        }
        1 => {
            let mut out = Tensor::zeros(c, h, w);
            for ch in 0..c {
                let src = x.plane(ch);
                let dst = out.plane_mut(ch);
                for y in 0..h {
                    let y1 = (y + 1).min(h - 1);
                    for xx in 0..w {
                        let x1 = (xx + 1).min(w - 1);
                        dst[y * w + xx] = src[y * w + xx]
                            .max(src[y * w + x1])
                            .max(src[y1 * w + xx])
                            .max(src[y1 * w + x1]);
                    }
                }
            }
            Ok(out)
        }
        s => Err(Error::Shape(format!("pooling stride must be 1 or 2, got {s}"))),
    }
}

/// Nearest-neighbour 2x up-sampling.
pub fn upsample2x(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.shape();
    let (cb, hb, wb) = b.shape();
    if (ha, wa) != (hb, wb) {
        return Err(Error::Shape(format!("cannot concatenate {ha}x{wa} with {hb}x{wb}")));
    }
    let mut data = Vec::with_capacity((ca + cb) * ha * wa);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(ca + cb, ha, wa, data)
}
