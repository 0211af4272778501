//! Training-dynamics instrumentation: per-layer label-assignment
//! switching-ratio curves, L1 distances between curves, and the
//! layer-decoupling report.
//!
//! Curves and distances are in percentage points, summed over epochs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::types::{Permutation, SampleId};
use crate::{Error, Result};

/// Per-epoch, per-layer record of the permutation chosen by PIT for every
/// training sample, evaluated on the full training set after the epoch.
#[derive(Debug, Clone, Default)]
pub struct SwitchLog {
    /// epochs[e][layer] maps SampleId -> chosen permutation; epoch index
    /// is 0-based here (epoch e+1 in training terms).
    epochs: Vec<Vec<BTreeMap<SampleId, Permutation>>>,
}

impl SwitchLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn n_layers(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.len())
    }

    /// The most recently logged epoch's per-layer assignments.
    pub fn last_epoch(&self) -> Option<&Vec<BTreeMap<SampleId, Permutation>>> {
        self.epochs.last()
    }

    /// Append one epoch's assignments. Every epoch must log the same
    /// layer count and id set.
    pub fn push_epoch(&mut self, layers: Vec<BTreeMap<SampleId, Permutation>>) -> Result<()> {
        if let Some(first) = self.epochs.first() {
            if first.len() != layers.len() {
                return Err(Error::Config(format!(
                    "epoch logs {} layers, expected {}",
                    layers.len(),
                    first.len()
                )));
            }
            for (a, b) in first.iter().zip(&layers) {
                if !a.keys().eq(b.keys()) {
                    return Err(Error::Config("epoch logs a different id set".into()));
                }
            }
        }
        self.epochs.push(layers);
        Ok(())
    }

    /// Fraction (percent) of samples whose assignment on `layer` differs
    /// between epochs `e-1` and `e` (1-based epochs, e >= 2).
    pub fn switching_ratio(&self, epoch: usize, layer: usize) -> Result<f64> {
        if epoch < 2 || epoch > self.epochs.len() {
            return Err(Error::Config(format!(
                "switching ratio needs epochs {epoch}-1 and {epoch} logged"
            )));
        }
        let prev = &self.epochs[epoch - 2][layer];
        let cur = &self.epochs[epoch - 1][layer];
        let switched = cur
            .iter()
            .filter(|(id, perm)| prev.get(id) != Some(perm))
            .count();
        Ok(100.0 * switched as f64 / cur.len() as f64)
    }

    /// Switching-ratio curve for one layer, starting at epoch 2.
    pub fn curve(&self, layer: usize) -> Result<SwitchCurve> {
        let values = (2..=self.epochs.len())
            .map(|e| self.switching_ratio(e, layer))
            .collect::<Result<Vec<_>>>()?;
        Ok(SwitchCurve { values })
    }
}

/// Per-epoch switching ratios in percent, starting at epoch 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchCurve {
    pub values: Vec<f64>,
}

/// Sum over epochs of |a_e - b_e|, in percentage points.
pub fn curve_l1_distance(a: &SwitchCurve, b: &SwitchCurve) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::LengthMismatch(a.values.len(), b.values.len()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// L1 distances between every intermediate layer's curve and the last
/// layer's, serialized keyed `"i_vs_N"` with 1-based layer indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub unit: String,
    pub distances: BTreeMap<String, f64>,
}

impl DecouplingReport {
    pub fn total(&self) -> f64 {
        self.distances.values().sum()
    }
}

pub fn decoupling_report(log: &SwitchLog) -> Result<DecouplingReport> {
    let n_layers = log.n_layers();
    if n_layers < 2 {
        return Err(Error::Config("decoupling needs at least 2 logged layers".into()));
    }
    let last = log.curve(n_layers - 1)?;
    let mut distances = BTreeMap::new();
    for i in 0..n_layers - 1 {
        let d = curve_l1_distance(&log.curve(i)?, &last)?;
        distances.insert(format!("{}_vs_{}", i + 1, n_layers), d);
    }
    Ok(DecouplingReport {
        unit: "percentage points summed over epochs".to_string(),
        distances,
    })
}

/// CSV with one row per epoch (starting at 2): `epoch,layer_1..layer_N`.
pub fn write_ratio_csv<W: Write>(log: &SwitchLog, mut w: W) -> Result<()> {
    let n_layers = log.n_layers();
    let header: Vec<String> = std::iter::once("epoch".to_string())
        .chain((1..=n_layers).map(|l| format!("layer_{l}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for e in 2..=log.n_epochs() {
        let mut row = vec![e.to_string()];
        for l in 0..n_layers {
            row.push(format!("{}", log.switching_ratio(e, l)?));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
