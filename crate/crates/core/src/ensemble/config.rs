use super::{Result, TrainError};
use crate::basenet::{Arch, BaseNetError};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub epochs: usize,
    /// EMA smoothing coefficient.
    pub alpha: f64,
    /// Teacher augmentation copies per unlabeled sample.
    pub copies: usize,
    pub noise_std: f64,
    pub window: usize,
    pub components: usize,
    pub n_per_class: usize,
    pub n_unlabeled: usize,
    /// Fixed filter quota; overrides the ramp-up when set.
    pub fixed_q: Option<usize>,
    /// Name of the selection policy in the [`PolicyRegistry`](super::PolicyRegistry).
    pub filter: String,
    /// Iterations per epoch; `None` derives it from the pool sizes.
    pub steps_per_epoch: Option<usize>,
    pub spectral_width: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            labeled_batch: 128,
            unlabeled_batch: 128,
            epochs: 20,
            alpha: 0.95,
            copies: 5,
            noise_std: 0.5,
            window: 16,
            components: 5,
            n_per_class: 30,
            n_unlabeled: 10_000,
            fixed_q: None,
            filter: "rampup".to_string(),
            steps_per_epoch: None,
            spectral_width: Arch::DEFAULT_SPECTRAL_WIDTH,
            conv_channels: Arch::DEFAULT_CONV_CHANNELS,
            hidden: Arch::DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.copies == 0 {
            return bad("copies (m) must be at least 1".into());
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise std must be non-negative, got {}", self.noise_std));
        }
        if self.fixed_q == Some(0) {
            return bad("fixed_q must be at least 1".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be at least 1".into());
        }
        Ok(())
    }

    /// Network dimensions for data with `bands` bands and `classes` classes.
    pub fn arch(&self, bands: usize, classes: usize) -> std::result::Result<Arch, BaseNetError> {
        Arch::new(bands, self.components, self.window, classes)?.with_widths(
            self.spectral_width,
            self.conv_channels,
            self.hidden,
        )
    }
}
