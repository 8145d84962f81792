//! Training recipe: combined CE/Dice loss, AdamW, cosine annealing with warm
//! restarts, flip/rotation augmentation and the step loop.

mod augment;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use augment::{augment, hflip, rot90, vflip, AugmentConfig};
pub use loss::{combined_loss, DICE_EPS};
pub use optim::{adamw_step, OptimizerState};
pub use schedule::{cosine_warm_restart_lr, Cycle};
pub use trainer::{train, write_trace_csv, TraceRow, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Peak learning rate η.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    /// Length of the first annealing cycle; `None` spans all of `max_iterations`.
    pub t_0: Option<u64>,
    pub t_mult: u64,
    pub max_iterations: u64,
    pub seed: u64,
    pub ce_weight: f64,
    pub dice_weight: f64,
    pub augment: AugmentConfig,
    /// Write a checkpoint every this many iterations.
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            lr: 0.01,
            beta1: 0.5,
            beta2: 0.99,
            weight_decay: 0.05,
            adam_eps: 1e-8,
            t_0: None,
            t_mult: 2,
            max_iterations: 1000,
            seed: 0,
            ce_weight: 0.4,
            dice_weight: 0.6,
            augment: AugmentConfig::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Effective first-cycle length.
    pub fn period(&self) -> u64 {
        self.t_0.unwrap_or(self.max_iterations).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail(format!("beta1/beta2 must lie in [0, 1), got {} / {}", self.beta1, self.beta2));
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if self.t_0 == Some(0) || self.t_mult == 0 {
            return fail("t_0 and t_mult must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return fail("weight_decay must be >= 0 and adam_eps > 0".into());
        }
        if self.ce_weight < 0.0 || self.dice_weight < 0.0 || (self.ce_weight + self.dice_weight - 1.0).abs() > 1e-12 {
            return fail(format!(
                "ce_weight + dice_weight must equal 1, got {} + {}",
                self.ce_weight, self.dice_weight
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 24);
        assert_eq!((c.beta1, c.beta2, c.lr), (0.5, 0.99, 0.01));
        assert_eq!(c.t_mult, 2);
        assert_eq!(c.period(), c.max_iterations);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { t_0: Some(0), ..Default::default() },
            TrainConfig { t_mult: 0, ..Default::default() },
            TrainConfig { ce_weight: 0.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
