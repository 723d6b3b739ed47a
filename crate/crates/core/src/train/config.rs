use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::InitMode;

/// Optimisation recipe. Defaults follow the published schedule; desk-scale
/// runs usually cap `max_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossWeights,
    /// Upper bound on optimisation steps; the cosine schedule spans the capped total.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub init: InitMode,
    /// Global gradient-norm clip; off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many steps (0 = only the final one).
    pub checkpoint_every: usize,
    /// Evaluate held-out PSNR every this many steps (0 = only after the last step).
    pub eval_every: usize,
    /// Trailing fraction of the dataset held out from training.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 6,
            lr_start: 3e-4,
            lr_end: 3e-5,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossWeights::default(),
            max_steps: None,
            init: InitMode::ZeroFlow,
            grad_clip: None,
            checkpoint_every: 0,
            eval_every: 50,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::config("learning rates must satisfy lr_start >= lr_end > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be finite and nonnegative"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be at least 1"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("grad_clip must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction must lie in [0, 1)"));
        }
        self.loss.validate()
    }

    /// Items held out at the end of an `n`-item dataset; at least one item always trains.
    pub fn holdout_len(&self, n: usize) -> usize {
        ((n as f64 * self.holdout_fraction).floor() as usize).min(n.saturating_sub(1))
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size).max(1)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(n_train);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Cosine-annealed learning rate at `step` of `total_steps`, exact at both ends.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::contract(format!("step {step} outside the schedule [0, {total_steps}]")));
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
    Ok(cfg.lr_start * w + cfg.lr_end * (1.0 - w))
}
