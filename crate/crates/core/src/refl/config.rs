use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::RewardLossMap;

/// Settings of the reward feedback fine-tuning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReFLConfig {
    /// Weight of the reward term.
    pub lambda: f64,
    /// Number of denoising steps `T`.
    pub steps: usize,
    pub t_min: usize,
    /// Defaults to `steps`.
    pub t_max: Option<usize>,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    pub batch_size: usize,
    /// Pre-training pairs per step; defaults to `batch_size`.
    pub pretrain_batch_size: Option<usize>,
    pub max_iterations: u64,
    /// Validation evaluations without improvement before stopping.
    pub early_stop_patience: u32,
    /// Validate every this many iterations.
    pub validation_interval: u64,
    pub reward_loss: RewardLossMap,
    /// Per-sample bound on the magnitude of the reward-loss term.
    pub reward_clamp: Option<f64>,
}

impl Default for ReFLConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            steps: 50,
            t_min: 30,
            t_max: None,
            learning_rate: 1e-5,
            momentum: 0.9,
            batch_size: 128,
            pretrain_batch_size: None,
            max_iterations: 1000,
            early_stop_patience: 5,
            validation_interval: 50,
            reward_loss: RewardLossMap::Negate,
            reward_clamp: None,
        }
    }
}

impl ReFLConfig {
    pub fn t_max(&self) -> usize {
        self.t_max.unwrap_or(self.steps)
    }

    pub fn pretrain_batch_size(&self) -> usize {
        self.pretrain_batch_size.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        };
        check(self.steps >= 1, "steps", "must be at least 1")?;
        check(
            self.lambda.is_finite() && self.lambda >= 0.0,
            "lambda",
            "must be finite and non-negative",
        )?;
        check(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate",
            "must be finite and positive",
        )?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            "must lie in [0, 1)",
        )?;
        check(self.t_min >= 1, "t_min", "must be at least 1")?;
        check(
            self.t_max() >= self.t_min,
            "t_max",
            "must not be below t_min",
        )?;
        check(self.t_max() <= self.steps, "t_max", "must not exceed steps")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(
            self.validation_interval >= 1,
            "validation_interval",
            "must be at least 1",
        )?;
        if let Some(c) = self.reward_clamp {
            check(c.is_finite() && c > 0.0, "reward_clamp", "must be positive")?;
        }
        if let RewardLossMap::ReluMargin { margin } = self.reward_loss {
            check(margin.is_finite(), "reward_loss.margin", "must be finite")?;
        }
        Ok(())
    }
}
