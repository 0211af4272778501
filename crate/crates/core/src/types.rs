//! Shared domain types: waveforms, sample ids, permutations, loss matrices.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A fixed-sample-rate real-valued signal. Sources, mixtures and estimates
/// are all waveforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    /// Length must be at least 1 and all values finite.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees length >= 1
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Stable identifier of a training sample, identical across epochs.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SampleId(pub u64);

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A label assignment: `mapping[i]` is the target index paired with
/// estimate `i`. Always a bijection on `{0..n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        if n == 0 {
            return Err(Error::InvalidPermutation("empty mapping".into()));
        }
        let mut seen = vec![false; n];
        for &t in &mapping {
            if t >= n || seen[t] {
                return Err(Error::InvalidPermutation(format!(
                    "{mapping:?} is not a bijection on 0..{n}"
                )));
            }
            seen[t] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// Target index assigned to estimate `i`.
    pub fn target_of(&self, i: usize) -> usize {
        self.mapping[i]
    }
}

impl std::fmt::Display for Permutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.mapping.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// N x N pairwise loss between N estimates and N targets;
/// `get(i, j)` is the loss of pairing estimate `i` with target `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl LossMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::NonSquareMatrix { rows: 0, cols: 0 });
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::NonSquareMatrix {
                    rows: n,
                    cols: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::from_flat(n, entries)
    }

    /// Row-major flat construction.
    pub fn from_flat(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::NonSquareMatrix {
                rows: n,
                cols: if n == 0 { 0 } else { entries.len() / n },
            });
        }
        if let Some(idx) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Mean of the entries selected by `perm`.
    pub fn mean_under(&self, perm: &Permutation) -> Result<f64> {
        if perm.len() != self.n {
            return Err(Error::PermutationSize {
                perm: perm.len(),
                expected: self.n,
            });
        }
        let total: f64 = (0..self.n).map(|i| self.get(i, perm.target_of(i))).sum();
        Ok(total / self.n as f64)
    }
}
