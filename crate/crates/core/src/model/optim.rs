//! AdamW with decoupled weight decay, per-group learning rates and linear
//! warmup.

use super::params::{Gradients, Layer, ModelParams, ParamGroup};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from zero.
    pub warmup: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 1e-3,
            lr_head: 1e-2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl OptimState {
    pub fn new(config: OptimConfig, params: &ModelParams) -> Self {
        Self {
            config,
            first: vec![0.0; params.len()],
            second: vec![0.0; params.len()],
            step: 0,
        }
    }

    /// Multiplier applied to both learning rates at the current step.
    pub fn warmup_factor(&self) -> f64 {
        if self.config.warmup == 0 {
            1.0
        } else {
            (self.step as f64 / self.config.warmup as f64).min(1.0)
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        if grads.data.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        if let Some(i) = grads.data.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(ModelParams::layer_of(&params.arch, i).name().into()));
        }
        let c = &self.config;
        let scale = self.warmup_factor();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for layer in Layer::ALL {
            let lr = scale
                * match layer.group() {
                    ParamGroup::Encoder => c.lr_encoder,
                    ParamGroup::Head => c.lr_head,
                };
            let (w, b) = ModelParams::ranges(&params.arch, layer);
            for i in w.start..b.end {
                let g = grads.data[i];
                let m = c.beta1 * self.first[i] + (1.0 - c.beta1) * g;
                let v = c.beta2 * self.second[i] + (1.0 - c.beta2) * g * g;
                self.first[i] = m;
                self.second[i] = v;
                let update = (m / bc1) / ((v / bc2).sqrt() + c.eps);
                params.data[i] -= lr * (update + c.weight_decay * params.data[i]);
            }
        }
        self.step += 1;
        Ok(())
    }
}
