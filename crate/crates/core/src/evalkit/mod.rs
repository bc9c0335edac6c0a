//! Image quality metrics, the feature-swap study and ablation tables.

mod color;
mod report;

pub use color::{delta_e_2000, delta_e_2000_lab, srgb_to_lab};
pub use report::{ablation_report, config_label, AblationRow, AblationTable, COLUMNS};

use std::fmt;

use crate::error::{Error, Result};
use crate::histnet::NetworkWeights;
use crate::image::Image;
use crate::par::Execution;
use crate::pipesim::PairedSample;

/// PSNR reported for identical images.
pub const PSNR_INFINITY: f64 = f64::INFINITY;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b, "mse")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(sum / a.data().len().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB for images on the `[0, 1]` scale.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_INFINITY } else { 10.0 * (1.0 / m).log10() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    RawToJpeg,
    JpegToRaw,
    Cycle,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::RawToJpeg, Direction::JpegToRaw, Direction::Cycle];

    pub fn label(self) -> &'static str {
        match self {
            Direction::RawToJpeg => "RAW→JPEG",
            Direction::JpegToRaw => "JPEG→RAW",
            Direction::Cycle => "Cycle(JPEG)",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub direction: Direction,
    pub psnr: Vec<f64>,
    pub delta_e: Vec<f64>,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_delta_e(&self) -> f64 {
        mean(&self.delta_e)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Translations of one sample in every direction, clamped, at full resolution.
pub fn predict_all(weights: &NetworkWeights, sample: &PairedSample) -> Result<[Image; 3]> {
    let (raw_pred, shared) = weights.jpeg_to_raw(&sample.jpeg)?;
    let jpeg_pred = weights.raw_to_jpeg(&sample.raw, shared.as_ref())?;
    let cycle = weights.raw_to_jpeg(&raw_pred, shared.as_ref())?;
    Ok([jpeg_pred, raw_pred, cycle])
}

/// Per-image metrics for the three directions, in [`Direction::ALL`] order.
/// `with_delta_e` also fills the color-difference column.
pub fn direction_reports(
    weights: &NetworkWeights,
    samples: &[PairedSample],
    with_delta_e: bool,
    exec: Execution,
) -> Result<[MetricReport; 3]> {
    let per_sample = exec.try_map_range(samples.len(), |i| {
        let s = &samples[i];
        let preds = predict_all(weights, s)?;
        let targets = [&s.jpeg, &s.raw, &s.jpeg];
        let mut out = [(0.0, 0.0); 3];
        for d in 0..3 {
            let de = if with_delta_e { delta_e_2000(&preds[d], targets[d])? } else { f64::NAN };
            out[d] = (psnr(&preds[d], targets[d])?, de);
        }
        Ok::<_, Error>(out)
    })?;
    Ok(Direction::ALL.map(|direction| {
        let d = direction as usize;
        MetricReport {
            direction,
            psnr: per_sample.iter().map(|m| m[d].0).collect(),
            delta_e: if with_delta_e { per_sample.iter().map(|m| m[d].1).collect() } else { Vec::new() },
        }
    }))
}

/// Report with one column per direction and rows for mean PSNR and mean
/// color difference.
pub fn reports_csv(reports: &[MetricReport; 3]) -> String {
    let cols: Vec<&str> = reports.iter().map(|r| r.direction.label()).collect();
    let psnr: Vec<String> = reports.iter().map(|r| format!("{:.4}", r.mean_psnr())).collect();
    let de: Vec<String> = reports.iter().map(|r| format!("{:.4}", r.mean_delta_e())).collect();
    format!("metric,{}\npsnr_db,{}\ndelta_e_2000,{}\n", cols.join(","), psnr.join(","), de.join(","))
}

/// [`reports_csv`] as an aligned plain-text table.
pub fn reports_table(reports: &[MetricReport; 3]) -> String {
    let mut out = format!("{:<14}", "metric");
    for r in reports {
        out.push_str(&format!("{:>14}", r.direction.label()));
    }
    out.push('\n');
    for (name, f) in [("PSNR (dB)", MetricReport::mean_psnr as fn(&MetricReport) -> f64), ("ΔE2000", MetricReport::mean_delta_e)] {
        out.push_str(&format!("{name:<14}"));
        for r in reports {
            out.push_str(&format!("{:>14.3}", f(r)));
        }
        out.push('\n');
    }
    out
}

/// Translates each photo's predicted RAW back to JPEG with the other photo's
/// shared feature: `(N1(raw_a, f(l_b)), N1(raw_b, f(l_a)))`.
pub fn feature_swap(photo_a: &Image, photo_b: &Image, weights: &NetworkWeights) -> Result<(Image, Image)> {
    photo_a.check_same_size(photo_b, "feature swap")?;
    let (raw_a, fa) = weights.jpeg_to_raw(photo_a)?;
    let (raw_b, fb) = weights.jpeg_to_raw(photo_b)?;
    let (Some(fa), Some(fb)) = (fa, fb) else {
        return Err(Error::Contract("feature swap needs a network with feature sharing".into()));
    };
    Ok((weights.raw_to_jpeg(&raw_a, Some(&fb))?, weights.raw_to_jpeg(&raw_b, Some(&fa))?))
}
