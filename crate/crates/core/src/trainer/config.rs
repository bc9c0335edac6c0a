use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::histnet::{ArchConfig, PoolKind, ShareLayer, HIDDEN_CHANNELS, SHARED_DIM};

/// Training hyperparameters and the architecture switches being ablated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the cycle term.
    pub lambda: f64,
    pub batch_size: usize,
    pub crop_min: usize,
    pub crop_out: usize,
    /// Probability of each of the two flips.
    pub flip_prob: f64,
    pub steps: usize,
    pub seed: u64,
    pub use_cycle: bool,
    pub use_sharing: bool,
    pub share_layer: ShareLayer,
    pub pool_kind: PoolKind,
    pub hidden: usize,
    pub shared_dim: usize,
    pub kernel_size: usize,
    /// Steps between validation passes.
    pub eval_interval: usize,
    pub max_val_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lambda: 1.0,
            batch_size: 8,
            crop_min: 128,
            crop_out: 256,
            flip_prob: 0.5,
            steps: 5000,
            seed: 0,
            use_cycle: true,
            use_sharing: true,
            share_layer: ShareLayer::Conv1,
            pool_kind: PoolKind::Average,
            hidden: HIDDEN_CHANNELS,
            shared_dim: SHARED_DIM,
            kernel_size: 1,
            eval_interval: 100,
            max_val_samples: None,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            hidden: self.hidden,
            kernel_size: self.kernel_size,
            use_sharing: self.use_sharing,
            share_layer: self.share_layer,
            pool_kind: self.pool_kind,
            shared_dim: self.shared_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.learning_rate > 0.0, Config, "learning_rate must be positive");
        ensure!(self.lambda >= 0.0, Config, "lambda must be non-negative");
        ensure!(self.batch_size >= 1, Config, "batch_size must be at least 1");
        ensure!(self.crop_min >= 1 && self.crop_out >= 1, Config, "crop sizes must be positive");
        ensure!((0.0..=1.0).contains(&self.flip_prob), Config, "flip_prob must lie in [0, 1]");
        ensure!(self.eval_interval >= 1, Config, "eval_interval must be at least 1");
        self.arch().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| crate::Error::Config(format!("invalid training config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
