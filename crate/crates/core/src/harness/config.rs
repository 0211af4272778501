//! Run configuration: dataset + model + training strategy + optimizer
//! settings, loaded from a single JSON document.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::DatasetConfig;
use crate::dsd::{DsdMode, Epsilon};
use crate::lo::LayerWeights;
use crate::model::SeparatorConfig;
use crate::{Error, Result};

fn default_beta_start() -> f64 {
    2.0
}
fn default_beta_end() -> f64 {
    20.0
}
fn default_iterations() -> usize {
    50
}

/// Label-assignment strategy for the training loop. Tagged by `name` in
/// JSON, e.g. `{"name": "dsd", "epsilon": 0.1, "mode": "dropout"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Strategy {
    /// Minimum-loss permutation per sample, every epoch.
    Pit,
    /// Plain PIT through epoch `fix_epoch`, then each sample reuses its
    /// epoch-`fix_epoch` assignment.
    PitFix { fix_epoch: usize },
    /// Soft assignment over all permutations via Sinkhorn normalization,
    /// with a geometric inverse-temperature ramp.
    Sinkpit {
        #[serde(default = "default_beta_start")]
        beta_start: f64,
        #[serde(default = "default_beta_end")]
        beta_end: f64,
        #[serde(default = "default_iterations")]
        iterations: usize,
    },
    /// Dynamic sample dropout around final-layer PIT.
    Dsd {
        epsilon: Epsilon,
        mode: DsdMode,
        #[serde(default)]
        overwrite_on_keep: bool,
    },
    /// Weighted per-layer PIT losses over intermediate reconstructions.
    Lo {
        /// One weight per block; defaults to `i / n_blocks`.
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// DSD decisions (from the final layer) applied to the layer-wise
    /// loss.
    DsdLo {
        epsilon: Epsilon,
        mode: DsdMode,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        overwrite_on_keep: bool,
    },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Pit => "pit",
            Strategy::PitFix { .. } => "pit_fix",
            Strategy::Sinkpit { .. } => "sinkpit",
            Strategy::Dsd { .. } => "dsd",
            Strategy::Lo { .. } => "lo",
            Strategy::DsdLo { .. } => "dsd_lo",
        }
    }

    /// True when training decodes every block (layer-wise losses).
    pub fn uses_all_layers(&self) -> bool {
        matches!(self, Strategy::Lo { .. } | Strategy::DsdLo { .. })
    }

    /// Strategy from a bare CLI name using default hyperparameters;
    /// `epochs` sizes the pit_fix switchover point.
    pub fn from_name(name: &str, epochs: usize) -> Result<Self> {
        let eps = Epsilon::new(0.1).expect("valid default");
        Ok(match name {
            "pit" => Strategy::Pit,
            "pit_fix" => Strategy::PitFix {
                fix_epoch: (epochs / 2).max(1),
            },
            "sinkpit" => Strategy::Sinkpit {
                beta_start: default_beta_start(),
                beta_end: default_beta_end(),
                iterations: default_iterations(),
            },
            "dsd" => Strategy::Dsd {
                epsilon: eps,
                mode: DsdMode::Dropout,
                overwrite_on_keep: false,
            },
            "lo" => Strategy::Lo { weights: None },
            "dsd_lo" => Strategy::DsdLo {
                epsilon: eps,
                mode: DsdMode::Dropout,
                weights: None,
                overwrite_on_keep: false,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown strategy {other:?} (expected pit, pit_fix, sinkpit, dsd, lo or dsd_lo)"
                )))
            }
        })
    }
}

fn default_epochs() -> usize {
    60
}
fn default_batch_size() -> usize {
    8
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_clip_norm() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: SeparatorConfig,
    pub strategy: Strategy,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        if self.dataset.n_sources != self.model.n_sources {
            return Err(Error::Config(format!(
                "dataset has {} sources but the model separates {}",
                self.dataset.n_sources, self.model.n_sources
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        match &self.strategy {
            Strategy::PitFix { fix_epoch } => {
                if *fix_epoch == 0 || *fix_epoch >= self.epochs {
                    return Err(Error::Config(format!(
                        "pit_fix needs 1 <= fix_epoch < epochs, got fix_epoch {} with {} epochs",
                        fix_epoch, self.epochs
                    )));
                }
            }
            Strategy::Sinkpit {
                beta_start,
                beta_end,
                iterations,
            } => {
                if !(*beta_start > 0.0 && *beta_end >= *beta_start) {
                    return Err(Error::Config(format!(
                        "sinkpit needs 0 < beta_start <= beta_end, got {beta_start} .. {beta_end}"
                    )));
                }
                if *iterations == 0 {
                    return Err(Error::Config("sinkpit iterations must be >= 1".into()));
                }
            }
            Strategy::Lo { weights } | Strategy::DsdLo { weights, .. } => {
                if let Some(w) = weights {
                    if w.len() != self.model.n_blocks {
                        return Err(Error::Config(format!(
                            "{} layer weights for {} blocks",
                            w.len(),
                            self.model.n_blocks
                        )));
                    }
                    LayerWeights::new(w.clone())?;
                }
            }
            Strategy::Pit | Strategy::Dsd { .. } => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}
