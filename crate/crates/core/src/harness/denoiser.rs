//! Two-layer tanh network predicting the added noise, with hand-written
//! backward pass.
//!
//! Input is `[z_t (256) | condition (256) | t / t_max]`, output is a 256-vector
//! noise estimate. Parameters live in one flat buffer laid out as
//! `W1 (hidden x in) | b1 (hidden) | W2 (out x hidden) | b2 (out)`.

use rand::Rng;

use super::task::PIXELS;

pub const INPUT: usize = 2 * PIXELS + 1;
pub const OUTPUT: usize = PIXELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub hidden: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { hidden: 32 }
    }
}

impl DenoiserConfig {
    pub fn n_params(&self) -> usize {
        self.hidden * INPUT + self.hidden + OUTPUT * self.hidden + OUTPUT
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * INPUT;
        let w2 = b1 + self.hidden;
        let b2 = w2 + OUTPUT * self.hidden;
        [w1, b1, w2, b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Denoiser {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: DenoiserConfig, rng: &mut R) -> Self {
        let mut params = vec![0.0; cfg.n_params()];
        let [w1, b1, w2, b2] = cfg.offsets();
        let lim1 = (6.0 / (INPUT + cfg.hidden) as f64).sqrt();
        let lim2 = (6.0 / (OUTPUT + cfg.hidden) as f64).sqrt();
        for p in &mut params[w1..b1] {
            *p = rng.random_range(-lim1..lim1);
        }
        for p in &mut params[w2..b2] {
            *p = rng.random_range(-lim2..lim2);
        }
        Self { cfg, params }
    }

    pub fn input(z: &[f64], condition: &[f64], t_frac: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(INPUT);
        x.extend_from_slice(z);
        x.extend_from_slice(condition);
        x.push(t_frac);
        x
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        forward_with(self.cfg, &self.params, input)
    }

    pub fn backward(&self, input: &[f64], cache: &ForwardCache, d_output: &[f64], grad: &mut [f64]) {
        backward_with(self.cfg, &self.params, input, cache, d_output, grad)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

pub fn forward_with(cfg: DenoiserConfig, params: &[f64], input: &[f64]) -> ForwardCache {
    debug_assert_eq!(input.len(), INPUT);
    debug_assert_eq!(params.len(), cfg.n_params());
    let [w1, b1, w2, b2] = cfg.offsets();
    let hidden: Vec<f64> = (0..cfg.hidden)
        .map(|k| {
            let row = &params[w1 + k * INPUT..w1 + (k + 1) * INPUT];
            let pre = params[b1 + k] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            pre.tanh()
        })
        .collect();
    let output = (0..OUTPUT)
        .map(|o| {
            let row = &params[w2 + o * cfg.hidden..w2 + (o + 1) * cfg.hidden];
            params[b2 + o] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
        })
        .collect();
    ForwardCache { hidden, output }
}

/// Accumulates `d loss / d params` into `grad`, given `d loss / d output`.
pub fn backward_with(
    cfg: DenoiserConfig,
    params: &[f64],
    input: &[f64],
    cache: &ForwardCache,
    d_output: &[f64],
    grad: &mut [f64],
) {
    let [w1, b1, w2, b2] = cfg.offsets();
    let mut d_hidden = vec![0.0; cfg.hidden];
    for (o, &g) in d_output.iter().enumerate() {
        grad[b2 + o] += g;
        let base = w2 + o * cfg.hidden;
        for k in 0..cfg.hidden {
            grad[base + k] += g * cache.hidden[k];
            d_hidden[k] += g * params[base + k];
        }
    }
    for k in 0..cfg.hidden {
        // tanh' = 1 - tanh^2
        let d_pre = d_hidden[k] * (1.0 - cache.hidden[k] * cache.hidden[k]);
        grad[b1 + k] += d_pre;
        let row = &mut grad[w1 + k * INPUT..w1 + (k + 1) * INPUT];
        for (g, &x) in row.iter_mut().zip(input) {
            *g += d_pre * x;
        }
    }
}
