use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerStack, StackGrads};
use crate::error::{Error, Result};

/// SGD hyperparameters with a per-round multiplicative learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::decay")]
    pub decay: f64,
    #[serde(default = "defaults::min_lr")]
    pub min_lr: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn decay() -> f64 {
        0.993
    }
    pub fn min_lr() -> f64 {
        0.005
    }
    pub fn batch_size() -> usize {
        64
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            decay: defaults::decay(),
            min_lr: defaults::min_lr(),
            batch_size: defaults::batch_size(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.learning_rate) {
            return Err(Error::InvalidParam(format!(
                "need 0 < min_lr <= learning_rate, got min_lr={} learning_rate={}",
                self.min_lr, self.learning_rate
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "decay must be in (0, 1], got {}",
                self.decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout round `round` (0-based).
    pub fn lr_at(&self, round: usize) -> f64 {
        let exp = i32::try_from(round).unwrap_or(i32::MAX);
        (self.learning_rate * self.decay.powi(exp)).max(self.min_lr)
    }
}

/// `w <- w - lr * (g + l2 * w)` over the layers covered by `grads`.
pub fn sgd_step(stack: &mut LayerStack, grads: &StackGrads, lr: f64, l2: f64) -> Result<()> {
    if lr <= 0.0 || l2 < 0.0 || !lr.is_finite() || !l2.is_finite() {
        return Err(Error::InvalidParam(format!(
            "sgd needs lr > 0 and l2 >= 0, got lr={lr} l2={l2}"
        )));
    }
    if grads.to() > stack.len() {
        return Err(Error::Shape(format!(
            "gradients cover layers {}..{} of a {}-layer stack",
            grads.from,
            grads.to(),
            stack.len()
        )));
    }
    let from = grads.from;
    for (offset, g) in grads.layers.iter().enumerate() {
        let idx = from + offset;
        match (&mut stack.layers_mut()[idx], g) {
            (Layer::Dense(d), Some(g)) => {
                if g.weight.len() != d.weight.len()
                    || g.bias.as_ref().map(Vec::len) != d.bias.as_ref().map(Vec::len)
                {
                    return Err(Error::Shape(format!("gradient shape differs at layer {idx}")));
                }
                for (w, gw) in d.weight.iter_mut().zip(&g.weight) {
                    *w -= lr * (gw + l2 * *w);
                }
                if let (Some(b), Some(gb)) = (d.bias.as_mut(), g.bias.as_ref()) {
                    for (w, gw) in b.iter_mut().zip(gb) {
                        *w -= lr * (gw + l2 * *w);
                    }
                }
            }
            (Layer::Relu { .. }, None) => {}
            _ => return Err(Error::Shape(format!("gradient kind differs at layer {idx}"))),
        }
    }
    Ok(())
}
