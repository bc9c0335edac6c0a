//! The translator pair and the feature-sharing transform.
//!
//! Both translators share one body: learnable histograms of the input,
//! pooled over a four-level grid pyramid and stacked with the input itself
//! (75 channels), followed by three convolutions (128, 128, 3 channels).
//! The JPEG-to-RAW translator additionally exposes a hidden activation `l`;
//! the sharing transform pools it over space and maps it through a fully
//! connected layer. The RAW-to-JPEG translator receives that vector
//! repeated over the image and stacked with its own histogram features.

mod histogram;
mod network;

pub use histogram::{grid_edges, LearnableHistogram, MultiscalePool};
pub use network::{
    hist_features, image_var, BoundHistogram, BoundNetwork, BoundSharing, BoundTranslator, ConvLayer,
    HistogramParams, N2Output, NetworkWeights, SharedFeature, SharingWeights, TranslatorWeights,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const COLOR_CHANNELS: usize = 3;
pub const BINS: usize = 6;
pub const PYRAMID_GRIDS: [usize; 4] = [1, 2, 4, 8];
/// `3 x 6 x 4` pooled histogram channels plus the 3 image channels.
pub const HIST_FEATURE_CHANNELS: usize = COLOR_CHANNELS * BINS * PYRAMID_GRIDS.len() + COLOR_CHANNELS;
pub const HIDDEN_CHANNELS: usize = 128;
pub const SHARED_DIM: usize = 128;
/// Lower bound kept on histogram inverse widths.
pub const MIN_INV_WIDTH: f32 = 1e-3;

/// Which post-ReLU activation of the JPEG-to-RAW translator is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareLayer {
    Conv1,
    Conv2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Average,
    Max,
}

impl FromStr for ShareLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv1" => Ok(ShareLayer::Conv1),
            "conv2" => Ok(ShareLayer::Conv2),
            other => Err(Error::Config(format!("share layer must be conv1 or conv2, got {other:?}"))),
        }
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" => Ok(PoolKind::Average),
            "max" => Ok(PoolKind::Max),
            other => Err(Error::Config(format!("pool kind must be average or max, got {other:?}"))),
        }
    }
}

impl fmt::Display for ShareLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShareLayer::Conv1 => "conv1",
            ShareLayer::Conv2 => "conv2",
        })
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Average => "average",
            PoolKind::Max => "max",
        })
    }
}

/// Architecture hyperparameters. The defaults are the production network;
/// smaller `hidden` / `shared_dim` values exist for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: usize,
    pub kernel_size: usize,
    pub use_sharing: bool,
    pub share_layer: ShareLayer,
    pub pool_kind: PoolKind,
    pub shared_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: HIDDEN_CHANNELS,
            kernel_size: 1,
            use_sharing: true,
            share_layer: ShareLayer::Conv1,
            pool_kind: PoolKind::Average,
            shared_dim: SHARED_DIM,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden > 0, Config, "hidden channel count must be positive");
        ensure!(self.shared_dim > 0, Config, "shared dimension must be positive");
        ensure!(self.kernel_size % 2 == 1, Config, "kernel size must be odd, got {}", self.kernel_size);
        Ok(())
    }

    /// Input channels of the RAW-to-JPEG translator's first convolution.
    pub fn n1_input_channels(&self) -> usize {
        HIST_FEATURE_CHANNELS + if self.use_sharing { self.shared_dim } else { 0 }
    }
}

#[cfg(test)]
mod tests;
