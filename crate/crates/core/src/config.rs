use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every training hyperparameter, with the published defaults.
///
/// A JSON config file mirrors these field names; absent fields fall back
/// to the defaults, so partial configs are valid. The merged config is
/// echoed into training logs and checkpoints verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of refinement rounds after the initial one; the learner holds
    /// per-round weights for rounds `0..=iterations`.
    pub iterations: usize,
    /// Similarity heads per view and round.
    pub heads: usize,
    /// State branches in the multi-state encoder.
    pub states: usize,
    /// Hidden width of node representations.
    pub hidden: usize,
    /// Inner width of the classification head.
    pub classifier_hidden: usize,
    /// Sparsity trade-off inside the graph loss.
    pub gamma: f64,
    /// Weight of the graph loss in the pretraining objective.
    pub alpha: f64,
    /// Weight of the encoder diversity loss.
    pub beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Adam learning rate.
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Training epochs (pretraining or fine-tuning, whichever loop runs).
    pub epochs: usize,
    pub batch_size: usize,
    /// Quantile bins for the transfer-entropy prior.
    pub te_bins: usize,
    /// Lag for the transfer-entropy prior.
    pub te_lag: usize,
    pub seed: u64,
    /// Standardize each region's series before the pipeline sees it.
    pub zscore: bool,
    /// L2-normalize embeddings inside the contrastive loss. Disabling
    /// restores the raw dot-product form.
    pub contrastive_normalize: bool,
    /// Average in the mirrored (second-view-anchored) contrastive term.
    pub contrastive_symmetric: bool,
    /// Replace the learnable similarity by a uniform one, so connectivity
    /// reduces to the normalized statistical prior (ablation switch).
    pub fixed_learner: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3,
            heads: 4,
            states: 3,
            hidden: 64,
            classifier_hidden: 32,
            gamma: 0.01,
            alpha: 0.001,
            beta: 0.001,
            tau: 0.5,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 400,
            batch_size: 32,
            te_bins: 8,
            te_lag: 1,
            seed: 0,
            zscore: true,
            contrastive_normalize: true,
            contrastive_symmetric: false,
            fixed_learner: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.heads < 1 {
            return Err(Error::Config("heads must be >= 1".into()));
        }
        if self.states < 1 {
            return Err(Error::Config("states must be >= 1".into()));
        }
        if self.hidden < 2 {
            return Err(Error::Config("hidden must be >= 2".into()));
        }
        if self.classifier_hidden < 1 {
            return Err(Error::Config("classifier_hidden must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.te_bins < 2 {
            return Err(Error::Config("te_bins must be >= 2".into()));
        }
        if self.te_lag < 1 {
            return Err(Error::Config("te_lag must be >= 1".into()));
        }
        for (name, value) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, value) in [
            ("tau", self.tau),
            ("lr", self.lr),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::Config(format!("{name} must be finite and > 0")));
            }
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Parse a JSON config file; missing fields keep their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config JSON: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}
