use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub tv_weight: f64,
    pub batch_size: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.95,
            tv_weight: 1e-5,
            batch_size: 32,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("optimizer.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::config("optimizer.tv_weight", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optimizer.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Sticker pixels plus the heavy-ball momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub sticker: ImageTensor,
    pub velocity: ImageTensor,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(sticker: ImageTensor, settings: &OptimizerSettings) -> Self {
        Self {
            velocity: sticker.zeros_like(),
            sticker,
            learning_rate: settings.learning_rate,
            momentum: settings.momentum,
        }
    }

    /// `v <- mu v + g`, `x <- clamp(x - lr v, 0, 1)`.
    pub fn sgd_momentum_step(&mut self, grad: &ImageTensor) -> Result<()> {
        grad.ensure_same_shape(&self.sticker, "optimizer gradient")?;
        if !grad.is_finite() {
            return Err(Error::Optimizer("non-finite gradient".into()));
        }
        let mu = self.momentum;
        let lr = self.learning_rate;
        for ((x, v), g) in self
            .sticker
            .data_mut()
            .iter_mut()
            .zip(self.velocity.data_mut())
            .zip(grad.data())
        {
            *v = mu * *v + g;
            *x = (*x - lr * *v).clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// Mid-grey plus seeded uniform jitter in [-0.05, 0.05].
pub fn initial_sticker(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(height, width, 3, |_, _, _| 0.5 + rng.random_range(-0.05..=0.05))
}
