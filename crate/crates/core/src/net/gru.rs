//! Fully convolutional GRU cell.
//!
//! ```text
//! z  = sigmoid(W_z * x + U_z * h)
//! r  = sigmoid(W_r * x + U_r * h)
//! h~ = tanh(W * x + U * (r . h))
//! h' = (1 - z) h + z h~
//! ```
//! with `*` a same-padded convolution and `.` the element-wise product. The
//! equations carry no bias; optional biases (zero when absent) are supported
//! for weight files that include them.

use super::layers::{conv_raw, Activation};
use super::Tensor;
use crate::error::{Error, Result};

/// Largest `f32` strictly below one. The state is held inside
/// `[-STATE_BOUND, STATE_BOUND]` so it stays strictly within (-1, 1) even when
/// both gates saturate in single precision.
pub const STATE_BOUND: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights {
    pub channels: usize,
    pub k: usize,
    /// `W_z, W_r, W` stacked along the output axis: `3C x C x k x k`.
    pub input: Vec<f32>,
    /// `U_z, U_r, U` stacked the same way.
    pub state: Vec<f32>,
    /// Optional `b_z, b_r, b_h` (each `C`), empty when the cell is bias-free.
    pub bias: Vec<f32>,
}

impl GruWeights {
    pub fn zeros(channels: usize, k: usize) -> Self {
        let n = 3 * channels * channels * k * k;
        GruWeights {
            channels,
            k,
            input: vec![0.0; n],
            state: vec![0.0; n],
            bias: Vec::new(),
        }
    }

    fn gate_len(&self) -> usize {
        self.channels * self.channels * self.k * self.k
    }

    /// The six kernels in `W_z, U_z, W_r, U_r, W, U` order.
    pub fn kernels(&self) -> [&[f32]; 6] {
        let n = self.gate_len();
        [
            &self.input[..n],
            &self.state[..n],
            &self.input[n..2 * n],
            &self.state[n..2 * n],
            &self.input[2 * n..],
            &self.state[2 * n..],
        ]
    }

    /// Builds from the six kernels in `W_z, U_z, W_r, U_r, W, U` order.
    pub fn from_kernels(channels: usize, k: usize, kernels: [Vec<f32>; 6], bias: Vec<f32>) -> Result<Self> {
        let n = channels * channels * k * k;
        if kernels.iter().any(|v| v.len() != n) {
            return Err(Error::Shape(format!("each GRU kernel must hold {n} values")));
        }
        let [wz, uz, wr, ur, wh, uh] = kernels;
        let w = GruWeights {
            channels,
            k,
            input: [wz, wr, wh].concat(),
            state: [uz, ur, uh].concat(),
            bias,
        };
        w.check()?;
        Ok(w)
    }

    pub fn parameter_count(&self) -> usize {
        self.input.len() + self.state.len() + self.bias.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = 3 * self.gate_len();
        if self.input.len() != n || self.state.len() != n {
            return Err(Error::Shape(format!(
                "GRU kernels must hold {n} values each, got {} and {}",
                self.input.len(),
                self.state.len()
            )));
        }
        if !self.bias.is_empty() && self.bias.len() != 3 * self.channels {
            return Err(Error::Shape(format!(
                "GRU bias must be empty or hold {} values",
                3 * self.channels
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// One recurrent step. `h_prev` and `x` must both be `C x H x W`.
pub fn conv_gru_step(h_prev: &Tensor, x: &Tensor, weights: &GruWeights) -> Result<Tensor> {
    weights.check()?;
    let c = weights.channels;
    if x.channels() != c || h_prev.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "GRU with {c} channels got input {:?} and state {:?}",
            x.shape(),
            h_prev.shape()
        )));
    }
    let k = weights.k;
    let n = weights.gate_len();
    let plane = x.height() * x.width();
    let gates = c * plane;

    // W_z x, W_r x, W x in one pass; biases ride on the input convolutions
    let wx = conv_raw(x, &weights.input, &weights.bias, 3 * c, k, 1, Activation::Linear)?;
    let uh = conv_raw(h_prev, &weights.state[..2 * n], &[], 2 * c, k, 1, Activation::Linear)?;
    let wx = wx.data();
    let uh = uh.data();
    let h = h_prev.data();

    let mut z = vec![0.0f32; gates];
    let mut rh = vec![0.0f32; gates];
    for i in 0..gates {
        z[i] = sigmoid(wx[i] + uh[i]);
        let r = sigmoid(wx[gates + i] + uh[gates + i]);
        rh[i] = r * h[i];
    }
    let rh = Tensor::from_vec(c, x.height(), x.width(), rh)?;
    let u_rh = conv_raw(&rh, &weights.state[2 * n..], &[], c, k, 1, Activation::Linear)?;
    let u_rh = u_rh.data();

    let mut out = vec![0.0f32; gates];
    for i in 0..gates {
        let candidate = (wx[2 * gates + i] + u_rh[i]).tanh();
        let next = (1.0 - z[i]) * h[i] + z[i] * candidate;
        out[i] = next.clamp(-STATE_BOUND, STATE_BOUND);
    }
    Tensor::from_vec(c, x.height(), x.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, a: f32) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-a..a)).collect()
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = Tensor::from_vec(4, 3, 5, random(&mut rng, 60, 0.999)).unwrap();
        let x = Tensor::from_vec(4, 3, 5, random(&mut rng, 60, 5.0)).unwrap();
        let next = conv_gru_step(&h, &x, &GruWeights::zeros(4, 3)).unwrap();
        for (a, b) in next.data().iter().zip(h.data()) {
            assert_eq!(*a, 0.5 * b);
        }
        let zero = conv_gru_step(&Tensor::zeros(4, 3, 5), &x, &GruWeights::zeros(4, 3)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_steps_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (c, k) = (3, 3);
        let n = c * c * k * k;
        for _ in 0..50 {
            let scale = rng.random_range(0.1..50.0);
            let kernels = std::array::from_fn(|_| random(&mut rng, n, scale));
            let w = GruWeights::from_kernels(c, k, kernels, Vec::new()).unwrap();
            let mut h = Tensor::from_vec(c, 4, 4, random(&mut rng, c * 16, 0.999)).unwrap();
            for _ in 0..3 {
                let x = Tensor::from_vec(c, 4, 4, random(&mut rng, c * 16, 20.0)).unwrap();
                h = conv_gru_step(&h, &x, &w).unwrap();
                assert!(h.data().iter().all(|v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn kernel_order_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kernels: [Vec<f32>; 6] = std::array::from_fn(|_| random(&mut rng, 4 * 9, 1.0));
        let w = GruWeights::from_kernels(2, 3, kernels.clone(), Vec::new()).unwrap();
        for (a, b) in w.kernels().iter().zip(&kernels) {
            assert_eq!(*a, b.as_slice());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let w = GruWeights::zeros(2, 3);
        assert!(conv_gru_step(&Tensor::zeros(2, 3, 3), &Tensor::zeros(2, 3, 4), &w).is_err());
        assert!(conv_gru_step(&Tensor::zeros(3, 3, 3), &Tensor::zeros(3, 3, 3), &w).is_err());
    }
}
