//! SGD with momentum and weight decay, and the multi-step LR schedule.

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{KdError, Result};

/// One SGD update on flat buffers:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(KdError::ShapeMismatch {
            expected: vec![params.len()],
            actual: vec![grads.len(), velocity.len()],
        });
    }
    if !(lr > 0.0) {
        return Err(KdError::invalid(format!("learning rate must be positive, got {lr}")));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl Sgd {
    /// Applies one update to every parameter of `model` using its
    /// accumulated gradients.
    pub fn step(&self, model: &mut Model, lr: f64) -> Result<()> {
        for p in model.params_mut() {
            let grad = p.grad.data().to_vec();
            sgd_step(
                p.value.data_mut(),
                &grad,
                p.velocity.data_mut(),
                lr,
                self.momentum,
                self.weight_decay,
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub epoch_scale_k: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            total_epochs: 240,
            decay_epochs: vec![150, 180, 210],
            decay_factor: 0.1,
            epoch_scale_k: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.decay_factor > 0.0) || !(self.epoch_scale_k > 0.0) {
            return Err(KdError::invalid(
                "base_lr, decay_factor and epoch_scale_k must be positive",
            ));
        }
        if self.total_epochs == 0 {
            return Err(KdError::invalid("total_epochs must be positive"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KdError::invalid("decay_epochs must be strictly increasing"));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.total_epochs) {
            return Err(KdError::invalid("decay epochs must precede total_epochs"));
        }
        Ok(())
    }

    fn scale(&self, e: usize) -> usize {
        (self.epoch_scale_k * e as f64).round() as usize
    }

    /// Training length after applying the epoch-scale factor.
    pub fn scaled_total(&self) -> usize {
        self.scale(self.total_epochs)
    }

    pub fn scaled_decay_epochs(&self) -> Vec<usize> {
        self.decay_epochs.iter().map(|&e| self.scale(e)).collect()
    }

    /// The same schedule with its epoch axis stretched by `k`.
    pub fn scaled_by(&self, k: f64) -> Self {
        Self {
            epoch_scale_k: k,
            ..self.clone()
        }
    }

    /// A schedule of `epochs` total epochs whose decay points sit at the same
    /// relative positions as this one's.
    pub fn compressed_to(&self, epochs: usize) -> Self {
        self.scaled_by(epochs as f64 / self.total_epochs as f64)
    }
}

/// Learning rate in effect during `epoch` (0-based): the base rate times
/// `decay_factor` for every scaled decay epoch `<= epoch`.
pub fn lr_at(epoch: usize, sched: &ScheduleConfig) -> Result<f64> {
    let total = sched.scaled_total();
    if epoch >= total {
        return Err(KdError::EpochOutOfRange { epoch, total });
    }
    let decays = sched
        .decay_epochs
        .iter()
        .filter(|&&e| sched.scale(e) <= epoch)
        .count();
    Ok(sched.base_lr * sched.decay_factor.powi(decays as i32))
}
