use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::optim::{AdamConfig, RegConfig};

/// Which training procedure a state belongs to. Also selects the random
/// streams: the supervised baseline and the outer run share an
/// initialization stream, the inner run gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Supervised,
    Outer,
    Inner,
}

impl Stage {
    pub(crate) fn init_salt(self) -> u64 {
        match self {
            Stage::Supervised | Stage::Outer => 1,
            Stage::Inner => 2,
        }
    }

    pub(crate) fn stream_salt(self) -> u64 {
        match self {
            Stage::Supervised => 3,
            Stage::Outer => 1,
            Stage::Inner => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    /// Hidden layer widths; the last one is the embedding tap.
    pub hidden: Vec<usize>,
    pub lambda_u: f64,
    /// Confidence threshold for FixMatch and the outer run.
    pub tau: f64,
    pub tau_inner: f64,
    pub tau_select: f64,
    pub loss_l: LossSpec,
    /// Unlabeled loss for FixMatch and the outer run.
    pub loss_u: LossSpec,
    /// Unlabeled loss for the inner run.
    pub loss_u_inner: LossSpec,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub epochs_outer: usize,
    pub epochs_inner: usize,
    pub lr0: f64,
    pub decay_gamma: f64,
    /// 1/C in the regularized objective.
    pub inv_c: f64,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    /// Starting value of the moving-average update counter.
    pub ema_counter_start: u64,
    pub augment: AugmentPolicy,
    pub kmeans_max_iters: usize,
    /// Feed trusted outer labels as soft vectors instead of one-hot.
    pub soft_outer_targets: bool,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            lambda_u: 1.0,
            tau: 0.95,
            tau_inner: 0.95,
            tau_select: 0.80,
            loss_l: LossSpec::ce(),
            loss_u: LossSpec::ce(),
            loss_u_inner: LossSpec::ce(),
            batch_labeled: 64,
            batch_unlabeled: 64,
            epochs_outer: 60,
            epochs_inner: 60,
            lr0: 3e-3,
            decay_gamma: 0.97,
            inv_c: 5e-4,
            adam: AdamConfig::default(),
            ema_decay: 0.9999,
            ema_counter_start: 0,
            augment: AugmentPolicy::vector(0.05),
            kmeans_max_iters: 100,
            soft_outer_targets: false,
            log_every: 50,
            seed: 1,
        }
    }
}

impl SslConfig {
    /// Settings for fine-tuning a large pretrained image backbone: learning
    /// rate 7e-5, otherwise the same as the default.
    pub fn backbone_finetune() -> Self {
        Self {
            lr0: 7e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tau", self.tau),
            ("tau_inner", self.tau_inner),
            ("tau_select", self.tau_select),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0,1], got {t}")));
            }
        }
        if !(self.lambda_u.is_finite() && self.lambda_u >= 0.0) {
            return Err(Error::config(format!("lambda_u must be >= 0, got {}", self.lambda_u)));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log interval must be positive"));
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::config("k-means needs at least one iteration"));
        }
        self.loss_l.validate()?;
        self.loss_u.validate()?;
        self.loss_u_inner.validate()?;
        self.reg(1).validate()?;
        self.augment.validate()?;
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::config(format!(
                "EMA decay must lie in (0,1), got {}",
                self.ema_decay
            )));
        }
        Ok(())
    }

    pub fn reg(&self, epoch_length: usize) -> RegConfig {
        RegConfig {
            inv_c: self.inv_c,
            lr0: self.lr0,
            decay_gamma: self.decay_gamma,
            epoch_length,
        }
    }

    pub fn arch(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut arch = vec![input_dim];
        arch.extend(&self.hidden);
        arch.push(num_classes);
        arch
    }

    pub fn total_batch(&self) -> usize {
        self.batch_labeled + self.batch_unlabeled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_json_fills_in() {
        SslConfig::default().validate().unwrap();
        assert_eq!(SslConfig::default().total_batch(), 128);
        let cfg: SslConfig = serde_json::from_str(r#"{"tau": 0.9, "epochs_outer": 3}"#).unwrap();
        assert_eq!(cfg.tau, 0.9);
        assert_eq!(cfg.epochs_outer, 3);
        assert_eq!(cfg.tau_select, 0.80);
    }

    #[test]
    fn thresholds_are_checked() {
        let cfg = SslConfig {
            tau: 0.0,
            ..SslConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = SslConfig {
            tau_select: 1.2,
            ..SslConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
