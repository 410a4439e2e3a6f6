use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdamConfig;

/// Optimization schedule and data composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    /// ε in `y(1−ε) + ε/N`.
    pub label_smoothing: f64,
    /// Adds one qualifier-entity query per qualifier pair, mixed into the
    /// same batches as the head and tail queries.
    pub use_aux_task: bool,
    pub seed: u64,
    /// Epochs between validation passes; 0 disables validation.
    pub eval_every: usize,
    /// Randomly reorders qualifier pairs of each training query.
    pub shuffle_qualifiers: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub eval_batch_size: usize,
    /// Batches assembled ahead of the optimizer.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            epochs: 400,
            max_steps: None,
            batch_size: 128,
            label_smoothing: 0.1,
            use_aux_task: true,
            seed: 0,
            eval_every: 10,
            shuffle_qualifiers: false,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            eval_batch_size: 256,
            prefetch: 4,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail(format!(
                "label_smoothing {} is outside [0, 1)",
                self.label_smoothing
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        if self.eval_batch_size == 0 || self.prefetch == 0 {
            return fail("eval_batch_size and prefetch must be at least 1".into());
        }
        Ok(())
    }
}
