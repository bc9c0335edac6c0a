//! Simulated camera color pipelines.
//!
//! A pipeline applies per-channel gains, a saturation adjustment against
//! Rec.601 luminance, clipping, gamma encoding and optional 8-bit
//! quantization, in that order. Sampling many such pipelines over canonical
//! linear images gives aligned RAW/JPEG-domain training pairs.

mod scenes;

pub use scenes::synthetic_scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::par::Execution;

/// Gamma values pipelines are drawn from.
pub const GAMMA_SET: [f64; 10] = [1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4, 2.6, 2.8];

pub const REC601: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub gains: [f64; 3],
    pub saturation: f64,
    /// Encoding exponent `g`: output = input^(1/g).
    pub gamma: f64,
    pub quantize: bool,
    pub id: u32,
}

impl PipelineSpec {
    pub fn identity() -> Self {
        PipelineSpec { gains: [1.0; 3], saturation: 1.0, gamma: 1.0, quantize: false, id: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.gains.iter().all(|&g| g > 0.0 && g.is_finite()), Config, "pipeline gains must be positive");
        ensure!(self.saturation >= 0.0 && self.saturation.is_finite(), Config, "saturation must be non-negative");
        ensure!(self.gamma > 0.0 && self.gamma.is_finite(), Config, "gamma must be positive");
        Ok(())
    }

    /// Runs the pipeline on one linear color.
    pub fn apply_color(&self, rgb: [f64; 3]) -> [f64; 3] {
        let gained = [rgb[0] * self.gains[0], rgb[1] * self.gains[1], rgb[2] * self.gains[2]];
        let luma = REC601[0] * gained[0] + REC601[1] * gained[1] + REC601[2] * gained[2];
        gained.map(|v| {
            let v = (luma + self.saturation * (v - luma)).clamp(0.0, 1.0);
            let v = v.powf(1.0 / self.gamma);
            if self.quantize {
                (v * 255.0).round() / 255.0
            } else {
                v
            }
        })
    }
}

/// Parameter ranges for [`sample_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRanges {
    pub gain: (f64, f64),
    pub saturation: (f64, f64),
    pub gammas: Vec<f64>,
    pub quantize: bool,
}

impl Default for PipelineRanges {
    fn default() -> Self {
        PipelineRanges { gain: (0.6, 1.4), saturation: (0.5, 1.5), gammas: GAMMA_SET.to_vec(), quantize: true }
    }
}

/// Draws a pipeline; a pure function of `seed`.
pub fn sample_pipeline(seed: u64, ranges: &PipelineRanges) -> PipelineSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains = [(); 3].map(|_| rng.gen_range(ranges.gain.0..=ranges.gain.1));
    let saturation = rng.gen_range(ranges.saturation.0..=ranges.saturation.1);
    let gamma = ranges.gammas[rng.gen_range(0..ranges.gammas.len())];
    PipelineSpec { gains, saturation, gamma, quantize: ranges.quantize, id: 0 }
}

/// Renders a canonical linear image through `spec`. Output lies in `[0, 1]`.
pub fn apply_pipeline(raw: &Image, spec: &PipelineSpec) -> Result<Image> {
    spec.validate()?;
    if let Some(v) = raw.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("pipeline input must be non-negative, found {v}")));
    }
    let mut out = raw.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let rgb = spec.apply_color([px[0] as f64, px[1] as f64, px[2] as f64]);
        for c in 0..3 {
            px[c] = rgb[c] as f32;
        }
    }
    Ok(out)
}

/// One aligned canonical/rendered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub raw: Image,
    pub jpeg: Image,
    pub spec: PipelineSpec,
    /// Index of the source canonical image.
    pub scene: usize,
    /// Capture source (camera or dataset) for balanced batching.
    pub source: usize,
}

impl PairedSample {
    pub fn spec_id(&self) -> u32 {
        self.spec.id
    }
}

/// Pipelines `seed, seed + 1, ...`, numbered from zero.
pub fn sample_pipelines(n: usize, seed: u64, ranges: &PipelineRanges) -> Vec<PipelineSpec> {
    (0..n)
        .map(|p| PipelineSpec { id: p as u32, ..sample_pipeline(seed.wrapping_add(p as u64), ranges) })
        .collect()
}

/// Every image rendered through every pipeline, image-major.
pub fn generate_dataset(
    raw_images: &[Image],
    n_pipelines: usize,
    seed: u64,
    ranges: &PipelineRanges,
    exec: Execution,
) -> Result<Vec<PairedSample>> {
    ensure!(!raw_images.is_empty(), Contract, "dataset generation needs at least one image");
    ensure!(n_pipelines > 0, Contract, "dataset generation needs at least one pipeline");
    let specs = sample_pipelines(n_pipelines, seed, ranges);
    render_pairs(raw_images, &specs, exec)
}

/// Renders each image through each given pipeline.
pub fn render_pairs(raw_images: &[Image], specs: &[PipelineSpec], exec: Execution) -> Result<Vec<PairedSample>> {
    let n = raw_images.len() * specs.len();
    exec.try_map_range(n, |i| {
        let (scene, p) = (i / specs.len(), i % specs.len());
        let raw = &raw_images[scene];
        Ok(PairedSample { raw: raw.clone(), jpeg: apply_pipeline(raw, &specs[p])?, spec: specs[p], scene, source: 0 })
    })
}

#[cfg(test)]
mod tests;
