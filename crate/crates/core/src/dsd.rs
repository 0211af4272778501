//! Dynamic sample dropout: a per-sample memory bank of the best
//! evaluation metric and label assignment, the relaxed-better test, and
//! the select / dropout / reorder decision procedure.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::types::{Permutation, SampleId};
use crate::{Error, Result};

/// What to do with a challenging sample whose assignment switched without
/// a relaxed-better metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsdMode {
    Dropout,
    Reorder,
}

/// Relaxation factor; `+inf` is an explicit value and degenerates DSD to
/// plain PIT. Serialized as a JSON number when finite, the string `"inf"`
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(f64);

impl Epsilon {
    pub const INFINITE: Epsilon = Epsilon(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::NegativeEpsilon(value));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let value = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => f64::INFINITY,
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("bad epsilon: {other:?}")))?,
            },
        };
        Epsilon::new(value).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsdConfig {
    pub epsilon: Epsilon,
    pub mode: DsdMode,
    /// Ablation flag: when true, the identical-assignment branch always
    /// overwrites the stored metric instead of keeping the max.
    #[serde(default)]
    pub overwrite_on_keep: bool,
}

impl DsdConfig {
    pub fn new(epsilon: Epsilon, mode: DsdMode) -> Self {
        Self {
            epsilon,
            mode,
            overwrite_on_keep: false,
        }
    }
}

/// Relaxed-better test: `m_cur * (1 + sgn(m_cur) * eps) > m_best`.
/// The sign term keeps the relaxation fair for negative metrics.
/// `eps = +inf` always passes.
pub fn relaxed_better(m_cur: f64, m_best: f64, epsilon: f64) -> Result<bool> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::NegativeEpsilon(epsilon));
    }
    if epsilon.is_infinite() {
        return Ok(true);
    }
    let sgn = if m_cur > 0.0 {
        1.0
    } else if m_cur < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok(m_cur * (1.0 + sgn * epsilon) > m_best)
}

/// Per-sample record of the best evaluation metric and its assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBankEntry {
    pub sample_id: SampleId,
    pub best_metric: f64,
    pub best_assignment: Permutation,
    pub updated_epoch: usize,
}

/// The DSD state: one entry per training sample, initialized at the first
/// epoch. Single-writer; updates are applied in deterministic sample
/// order.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    entries: BTreeMap<SampleId, MemoryBankEntry>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: SampleId) -> Option<&MemoryBankEntry> {
        self.entries.get(&id)
    }

    pub fn insert(&mut self, entry: MemoryBankEntry) {
        self.entries.insert(entry.sample_id, entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryBankEntry> {
        self.entries.values()
    }

    /// Line-oriented dump: `sample_id best_metric mapping updated_epoch`,
    /// one entry per line, mapping as comma-separated target indices.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for e in self.entries.values() {
            writeln!(
                w,
                "{} {} {} {}",
                e.sample_id, e.best_metric, e.best_assignment, e.updated_epoch
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut bank = MemoryBank::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("bad bank line: {line:?}")));
            }
            let sample_id = SampleId(
                fields[0]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad sample id {:?}", fields[0])))?,
            );
            let best_metric: f64 = fields[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad metric {:?}", fields[1])))?;
            let mapping = fields[2]
                .split(',')
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad mapping {:?}", fields[2])))
                })
                .collect::<Result<Vec<_>>>()?;
            let updated_epoch: usize = fields[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad epoch {:?}", fields[3])))?;
            bank.insert(MemoryBankEntry {
                sample_id,
                best_metric,
                best_assignment: Permutation::new(mapping)?,
                updated_epoch,
            });
        }
        Ok(bank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionKind {
    SelectKeep,
    SelectUpdate,
    Dropout,
    Reorder,
}

/// Per-sample DSD decision. `assignment_to_use` is absent for dropout;
/// reorder carries the stored best assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub kind: DecisionKind,
    pub assignment_to_use: Option<Permutation>,
}

/// Apply the select/dropout criteria for one sample at one step.
///
/// Epoch 1 initializes the bank and always selects. Afterwards an
/// unchanged assignment keeps the sample (bank metric overwritten only on
/// improvement unless `overwrite_on_keep`); a changed assignment is
/// accepted only when [`relaxed_better`] passes, otherwise the sample is
/// dropped (or reordered under the stored assignment).
pub fn dsd_decide(
    sample: SampleId,
    epoch: usize,
    current_assignment: &Permutation,
    current_metric: f64,
    bank: &mut MemoryBank,
    config: &DsdConfig,
) -> Result<Decision> {
    if epoch <= 1 {
        bank.insert(MemoryBankEntry {
            sample_id: sample,
            best_metric: current_metric,
            best_assignment: current_assignment.clone(),
            updated_epoch: epoch,
        });
        return Ok(Decision {
            kind: DecisionKind::SelectUpdate,
            assignment_to_use: Some(current_assignment.clone()),
        });
    }
    let entry = bank.get(sample).ok_or(Error::UnknownSample(sample.0))?.clone();
    if entry.best_assignment == *current_assignment {
        if config.overwrite_on_keep || current_metric > entry.best_metric {
            bank.insert(MemoryBankEntry {
                sample_id: sample,
                best_metric: current_metric,
                best_assignment: entry.best_assignment,
                updated_epoch: epoch,
            });
        }
        return Ok(Decision {
            kind: DecisionKind::SelectKeep,
            assignment_to_use: Some(current_assignment.clone()),
        });
    }
    if relaxed_better(current_metric, entry.best_metric, config.epsilon.value())? {
        bank.insert(MemoryBankEntry {
            sample_id: sample,
            best_metric: current_metric,
            best_assignment: current_assignment.clone(),
            updated_epoch: epoch,
        });
        return Ok(Decision {
            kind: DecisionKind::SelectUpdate,
            assignment_to_use: Some(current_assignment.clone()),
        });
    }
    match config.mode {
        DsdMode::Dropout => Ok(Decision {
            kind: DecisionKind::Dropout,
            assignment_to_use: None,
        }),
        DsdMode::Reorder => Ok(Decision {
            kind: DecisionKind::Reorder,
            assignment_to_use: Some(entry.best_assignment),
        }),
    }
}

/// Counters for one batch of decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DsdBatchStats {
    pub kept: usize,
    pub dropped: usize,
    pub reordered: usize,
    pub updates: usize,
}

/// Combine per-sample losses under a batch of decisions. Losses for
/// reorder samples must already be recomputed under the stored
/// permutation by the caller. Returns 0 when every sample dropped (the
/// optimizer step is then skipped).
pub fn dsd_apply(decisions: &[Decision], losses: &[f64]) -> (f64, DsdBatchStats) {
    assert_eq!(decisions.len(), losses.len(), "one decision per element");
    let mut stats = DsdBatchStats::default();
    let mut total = 0.0;
    for (d, &loss) in decisions.iter().zip(losses) {
        match d.kind {
            DecisionKind::Dropout => stats.dropped += 1,
            DecisionKind::Reorder => {
                stats.reordered += 1;
                stats.kept += 1;
                total += loss;
            }
            DecisionKind::SelectKeep => {
                stats.kept += 1;
                total += loss;
            }
            DecisionKind::SelectUpdate => {
                stats.kept += 1;
                stats.updates += 1;
                total += loss;
            }
        }
    }
    let effective = if stats.kept == 0 { 0.0 } else { total / stats.kept as f64 };
    (effective, stats)
}

/// Unique dropped samples over one epoch.
#[derive(Debug, Clone, Default)]
pub struct DsdEpochStats {
    dropped_ids: BTreeSet<SampleId>,
    pub dataset_size: usize,
}

impl DsdEpochStats {
    pub fn new(dataset_size: usize) -> Self {
        Self {
            dropped_ids: BTreeSet::new(),
            dataset_size,
        }
    }

    pub fn record_drop(&mut self, id: SampleId) {
        self.dropped_ids.insert(id);
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped_ids.len()
    }

    /// Dropped-sample count over dataset size, in [0, 1].
    pub fn drop_rate(&self) -> f64 {
        if self.dataset_size == 0 {
            0.0
        } else {
            self.dropped_ids.len() as f64 / self.dataset_size as f64
        }
    }
}
