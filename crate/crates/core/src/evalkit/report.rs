use std::fmt::Write;

use crate::error::Result;
use crate::par::Execution;
use crate::pipesim::PairedSample;
use crate::trainer::{evaluate, train, TrainConfig};

use super::Direction;

pub const COLUMNS: [&str; 3] = ["RAW→JPEG", "JPEG→RAW", "Cycle(JPEG)"];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// Mean PSNR per column of [`COLUMNS`].
    pub psnr: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Row label naming the sharing schema, pool kind and cycle switch.
pub fn config_label(config: &TrainConfig) -> String {
    let sharing = if config.use_sharing {
        format!("{} {}", config.share_layer, config.pool_kind)
    } else {
        "no sharing".to_string()
    };
    format!("{sharing}, cycle {}", if config.use_cycle { "on" } else { "off" })
}

impl AblationTable {
    /// Index of the best row per column; ties keep the first.
    pub fn best_rows(&self) -> [Option<usize>; 3] {
        [0, 1, 2].map(|c| {
            self.rows
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.psnr[c].is_nan())
                .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                    Some((_, b)) if b >= r.psnr[c] => best,
                    _ => Some((i, r.psnr[c])),
                })
                .map(|(i, _)| i)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("config,{}\n", COLUMNS.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.4},{:.4},{:.4}", r.label, r.psnr[0], r.psnr[1], r.psnr[2]);
        }
        out
    }

    /// Aligned plain-text table; the best value of each column is starred.
    pub fn to_table(&self) -> String {
        let best = self.best_rows();
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| [0, 1, 2].map(|c| format!("{:.2}{}", r.psnr[c], if best[c] == Some(i) { "*" } else { "" })))
            .collect();
        let label_w = self.rows.iter().map(|r| r.label.chars().count()).chain(["config".len()]).max().unwrap_or(0);
        let col_w: Vec<usize> = (0..3)
            .map(|c| cells.iter().map(|row| row[c].len()).chain([COLUMNS[c].chars().count()]).max().unwrap_or(0))
            .collect();
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let mut out = pad("config", label_w);
        for c in 0..3 {
            out.push_str("  ");
            out.push_str(&pad(COLUMNS[c], col_w[c]));
        }
        out = out.trim_end().to_string();
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&cells) {
            let mut line = pad(&r.label, label_w);
            for c in 0..3 {
                line.push_str("  ");
                line.push_str(&pad(&row[c], col_w[c]));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

/// Trains every configuration on `train_set` and evaluates it on `test_set`.
pub fn ablation_report(
    train_set: &[PairedSample],
    test_set: &[PairedSample],
    configs: &[TrainConfig],
    exec: Execution,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let outcome = train(train_set, config, exec)?;
        let t = evaluate(&outcome.weights, test_set, exec)?;
        rows.push(AblationRow { label: config_label(config), psnr: t.as_array() });
    }
    debug_assert_eq!(Direction::ALL.len(), COLUMNS.len());
    Ok(AblationTable { rows })
}
