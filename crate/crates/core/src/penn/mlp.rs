//! Dense ReLU network with Gaussian mean/variance heads and hand-written
//! backpropagation.
//!
//! Parameters live in one flat vector. Layer `l` maps `sizes[l]` inputs to
//! `sizes[l+1]` outputs and stores its weight matrix row-major
//! (`out × in`) followed by its bias vector; layers follow in order.
//! The final layer emits `(μ_Φ, ρ_Φ, μ_T, ρ_T)` where the variance of each
//! head is `softplus(ρ) + floor`.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const VAR_FLOOR: f64 = 1e-6;
pub const N_OUTPUTS: usize = 2;
/// Head weights selecting both loss terms.
pub const BOTH_HEADS: [f64; N_OUTPUTS] = [1.0, 1.0];
/// Head weights selecting only the safety-loss (Φ) term.
pub const SAFETY_HEAD: [f64; N_OUTPUTS] = [1.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Mean and variance of both heads for one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub mean: [f64; N_OUTPUTS],
    pub var: [f64; N_OUTPUTS],
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpWeights {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && *sizes.last().unwrap() == 2 * N_OUTPUTS);
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Uniform fan-in initialization `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let mut w = Self::zeros(sizes);
        let mut off = 0;
        for win in sizes.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            for p in &mut w.params[off..off + n_in * n_out] {
                *p = rng.random_range(-bound..bound);
            }
            off += n_in * n_out + n_out;
        }
        w
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Raw network output (before the variance link).
    pub fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(&self.sizes);
        self.forward_cached(x, &mut ws);
        ws.acts.last().unwrap().clone()
    }

    pub fn forward(&self, x: &[f64]) -> HeadOutput {
        heads(&self.forward_raw(x))
    }

    fn forward_cached(&self, x: &[f64], ws: &mut Workspace) {
        debug_assert_eq!(x.len(), self.sizes[0]);
        ws.acts[0].copy_from_slice(x);
        let last = self.sizes.len() - 2;
        let mut off = 0;
        for l in 0..=last {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut acc = b[j];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                out[j] = if l < last { acc.max(0.0) } else { acc };
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Loss of one normalized sample; adds `Σ_k scale[k] · ∇loss_k` into
    /// `grad`, where `loss_k` is the NLL term of head `k`.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        y: &[f64; N_OUTPUTS],
        scale: [f64; N_OUTPUTS],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let loss = self.output_delta(x, y, scale, ws);
        self.backward(grad, ws);
        loss
    }

    /// Forward pass, then `∂loss/∂(raw output)` into the last delta buffer.
    fn output_delta(&self, x: &[f64], y: &[f64; N_OUTPUTS], scale: [f64; N_OUTPUTS], ws: &mut Workspace) -> f64 {
        self.forward_cached(x, ws);
        let raw = ws.acts.last().unwrap();
        let out = heads(raw);
        let loss = nll_loss(&out, y);
        let delta = ws.deltas.last_mut().unwrap();
        for k in 0..N_OUTPUTS {
            let var = out.var[k];
            let r = out.mean[k] - y[k];
            delta[2 * k] = scale[k] * r / var;
            let dvar = 0.5 * (1.0 / var - r * r / (var * var));
            delta[2 * k + 1] = scale[k] * dvar * sigmoid(raw[2 * k + 1]);
        }
        loss
    }

    fn backward(&self, grad: &mut [f64], ws: &mut Workspace) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for win in self.sizes.windows(2) {
            offsets.push(off);
            off += win[0] * win[1] + win[1];
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let o = offsets[l];
            let w = &self.params[o..o + n_in * n_out];
            let (gw, gb) = grad[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let (d_lo, d_hi) = ws.deltas.split_at_mut(l);
            let delta = &d_hi[0];
            let input = &ws.acts[l];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                gb[j] += dj;
                let row = &mut gw[j * n_in..(j + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(input.iter()) {
                    *g += dj * xi;
                }
            }
            if l == 0 {
                break;
            }
            let dprev = &mut d_lo[l - 1];
            dprev.iter_mut().for_each(|d| *d = 0.0);
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &w[j * n_in..(j + 1) * n_in];
                for (d, wi) in dprev.iter_mut().zip(row.iter()) {
                    *d += dj * wi;
                }
            }
            // ReLU derivative on the hidden activation
            for (d, a) in dprev.iter_mut().zip(input.iter()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
    }

    /// Gradient of the loss of one normalized sample, with per-head weights.
    pub fn sample_grad(&self, x: &[f64], y: &[f64; N_OUTPUTS], heads: [f64; N_OUTPUTS]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params()];
        let mut ws = Workspace::new(&self.sizes);
        self.accumulate_grad(x, y, heads, &mut g, &mut ws);
        g
    }
}

impl MlpWeights {
    /// Gradient restricted to the output layer: its weights then its bias,
    /// i.e. the tail of the flat parameter vector.
    pub fn last_layer_grad(&self, x: &[f64], y: &[f64; N_OUTPUTS], heads: [f64; N_OUTPUTS]) -> Vec<f64> {
        let mut ws = Workspace::new(&self.sizes);
        self.output_delta(x, y, heads, &mut ws);
        let l = self.sizes.len() - 2;
        let input = &ws.acts[l];
        let delta = ws.deltas.last().unwrap();
        let mut g = Vec::with_capacity(input.len() * delta.len() + delta.len());
        for &d in delta {
            g.extend(input.iter().map(|a| d * a));
        }
        g.extend_from_slice(delta);
        g
    }
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    /// `deltas[l]` is ∂loss/∂(pre-activation of layer `l+1`).
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Apply the variance link to raw outputs.
pub fn heads(raw: &[f64]) -> HeadOutput {
    let mut h = HeadOutput {
        mean: [0.0; N_OUTPUTS],
        var: [0.0; N_OUTPUTS],
    };
    for k in 0..N_OUTPUTS {
        h.mean[k] = raw[2 * k];
        h.var[k] = softplus(raw[2 * k + 1]) + VAR_FLOOR;
    }
    h
}

/// `½[ln(2πσ²) + (y−μ)²/σ²]` of head `k`.
pub fn head_nll(pred: &HeadOutput, label: &[f64; N_OUTPUTS], k: usize) -> f64 {
    let r = label[k] - pred.mean[k];
    let var = pred.var[k];
    0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var)
}

/// Sum of [`head_nll`] over both outputs.
pub fn nll_loss(pred: &HeadOutput, label: &[f64; N_OUTPUTS]) -> f64 {
    (0..N_OUTPUTS).map(|k| head_nll(pred, label, k)).sum()
}
