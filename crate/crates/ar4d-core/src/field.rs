use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sinusoidal positional encoding. Layout: the raw input first when
/// `include_input`, then per input component sin/cos pairs at frequencies
/// 2^0 .. 2^(L-1):  sin(2^0 x), cos(2^0 x), sin(2^1 x), cos(2^1 x), ...
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            num_frequencies: 10,
            include_input: false,
        }
    }
}

impl EncodingConfig {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_frequencies + usize::from(self.include_input))
    }
}

pub fn encode(cfg: &EncodingConfig, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.output_dim(x.len()));
    if cfg.include_input {
        out.extend_from_slice(x);
    }
    for &v in x {
        let mut freq = 1.0;
        for _ in 0..cfg.num_frequencies {
            let a = freq * v;
            out.push(a.sin());
            out.push(a.cos());
            freq *= 2.0;
        }
    }
    out
}

/// Chain rule through the encoding: d_x[c] = sum_k d_enc[k] * d enc_k / d x_c.
pub fn encode_backward(cfg: &EncodingConfig, x: &[f64], d_enc: &[f64]) -> Vec<f64> {
    debug_assert_eq!(d_enc.len(), cfg.output_dim(x.len()));
    let mut d_x = vec![0.0; x.len()];
    let mut k = 0;
    if cfg.include_input {
        d_x.copy_from_slice(&d_enc[..x.len()]);
        k = x.len();
    }
    for (c, &v) in x.iter().enumerate() {
        let mut freq = 1.0;
        for _ in 0..cfg.num_frequencies {
            let a = freq * v;
            d_x[c] += d_enc[k] * freq * a.cos();
            d_x[c] -= d_enc[k + 1] * freq * a.sin();
            k += 2;
            freq *= 2.0;
        }
    }
    d_x
}

/// One affine layer, weights row-major out_dim x in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Fully-connected net: ReLU on every hidden layer, identity output.
/// The same struct doubles as its own gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
                in_dim: w[0],
                out_dim: w[1],
            })
            .collect();
        MlpParams { layers }
    }

    /// He-uniform hidden layers, zeroed final layer: the net starts out as
    /// the constant zero function regardless of hidden weights.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::zeros(dims);
        let last = mlp.layers.len() - 1;
        for layer in &mut mlp.layers[..last] {
            let limit = (6.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        mlp
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// Post-activation values kept from a forward pass; `hidden[l]` is the
/// ReLU output feeding layer l+1. ReLU masks are recovered from the sign.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<Vec<f64>>,
}

pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> (Vec<f64>, MlpCache) {
    assert_eq!(input.len(), params.input_dim(), "mlp input dim");
    let mut cache = MlpCache {
        input: input.to_vec(),
        hidden: Vec::with_capacity(params.layers.len() - 1),
    };
    let mut h = input.to_vec();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = layer.bias.clone();
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(&h) {
                acc += w * x;
            }
            z[o] += acc;
        }
        if l != last {
            for v in &mut z {
                *v = v.max(0.0);
            }
            cache.hidden.push(z.clone());
        }
        h = z;
    }
    (h, cache)
}

/// Accumulates parameter gradients into `d_params` (callers batch over many
/// inputs by reusing one container) and returns d_input.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpCache,
    d_output: &[f64],
    d_params: &mut MlpParams,
) -> Vec<f64> {
    assert_eq!(d_output.len(), params.output_dim(), "mlp output dim");
    let mut d = d_output.to_vec();
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let below: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
        let g = &mut d_params.layers[l];
        let mut d_below = vec![0.0; layer.in_dim];
        for o in 0..layer.out_dim {
            g.bias[o] += d[o];
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let g_row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let dv = d[o];
            for i in 0..layer.in_dim {
                g_row[i] += dv * below[i];
                d_below[i] += row[i] * dv;
            }
        }
        if l > 0 {
            // Through the ReLU that produced `below`; subgradient 0 at 0.
            for (db, h) in d_below.iter_mut().zip(below) {
                if *h <= 0.0 {
                    *db = 0.0;
                }
            }
        }
        d = d_below;
    }
    d
}

/// Adam with bias correction over one flat parameter array.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, what: &str) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "adam param count");
        assert_eq!(grads.len(), self.m.len(), "adam grad count");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::OptimizerDiverged { what: what.into() });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adam over a whole MLP: one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct MlpOptimizer {
    states: Vec<(AdamState, AdamState)>,
}

impl MlpOptimizer {
    pub fn new(params: &MlpParams) -> Self {
        MlpOptimizer {
            states: params
                .layers
                .iter()
                .map(|l| (AdamState::new(l.weights.len()), AdamState::new(l.bias.len())))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        for (l, ((sw, sb), (p, g))) in self
            .states
            .iter_mut()
            .zip(params.layers.iter_mut().zip(&grads.layers))
            .enumerate()
        {
            sw.step(&mut p.weights, &g.weights, lr, &format!("mlp layer {l} weights"))?;
            sb.step(&mut p.bias, &g.bias, lr, &format!("mlp layer {l} bias"))?;
        }
        Ok(())
    }
}

/// Log-linear interpolation from lr_init at step 0 to lr_final at
/// total_steps; constant at lr_final beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr_init: 5e-4,
            lr_final: 1e-6,
            total_steps: 2000,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return self.lr_final;
        }
        let f = step as f64 / self.total_steps as f64;
        self.lr_init * (self.lr_final / self.lr_init).powf(f)
    }
}
