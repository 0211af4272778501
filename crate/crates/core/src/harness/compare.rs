//! Side-by-side comparison of completed run directories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{read_epochs_csv, EpochRecord};
use crate::analysis::DecouplingReport;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunComparison {
    pub dir: String,
    pub strategy: String,
    pub best_val_si_sdri: f64,
    /// Mean final-layer switching ratio over the last third of training.
    pub mean_final_third_switch: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoupling_total: Option<f64>,
    pub delta_best_si_sdri_vs_first: f64,
    pub delta_switch_vs_first: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub epochs: usize,
    pub runs: Vec<RunComparison>,
}

#[derive(Deserialize)]
struct StoredReport {
    strategy: String,
    #[serde(default)]
    decoupling: Option<DecouplingReport>,
}

fn final_third_switch_mean(records: &[EpochRecord]) -> f64 {
    let start = records.len() - records.len() / 3;
    let values: Vec<f64> = records[start..]
        .iter()
        .filter_map(|r| r.switch_ratios.last().copied().flatten())
        .collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Compare at least two completed runs of equal length.
pub fn compare_dirs<P: AsRef<Path>>(dirs: &[P]) -> Result<ComparisonReport> {
    if dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two runs".into()));
    }
    let mut parsed = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let dir = dir.as_ref();
        let records = read_epochs_csv(&fs::read_to_string(dir.join("epochs.csv"))?)?;
        if records.is_empty() {
            return Err(Error::Parse(format!("{}: empty epochs.csv", dir.display())));
        }
        let report: StoredReport =
            serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?;
        parsed.push((dir.display().to_string(), records, report));
    }
    let epochs = parsed[0].1.len();
    if parsed.iter().any(|(_, r, _)| r.len() != epochs) {
        return Err(Error::Config("runs have different epoch counts".into()));
    }

    let stats: Vec<(f64, f64)> = parsed
        .iter()
        .map(|(_, records, _)| {
            let best = records
                .iter()
                .map(|r| r.val_si_sdri)
                .fold(f64::NEG_INFINITY, f64::max);
            (best, final_third_switch_mean(records))
        })
        .collect();
    let (first_best, first_switch) = stats[0];

    let runs = parsed
        .into_iter()
        .zip(stats)
        .map(|((dir, _, report), (best, switch))| RunComparison {
            dir,
            strategy: report.strategy,
            best_val_si_sdri: best,
            mean_final_third_switch: switch,
            decoupling_total: report.decoupling.map(|d| d.total()),
            delta_best_si_sdri_vs_first: best - first_best,
            delta_switch_vs_first: switch - first_switch,
        })
        .collect();
    Ok(ComparisonReport { epochs, runs })
}
