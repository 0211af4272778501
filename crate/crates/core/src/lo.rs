//! Layer-wise optimization: a weighted sum of per-layer PIT losses over
//! intermediate reconstructions, `L = (1/N) sum_i w_i * PIT(layer_i)`.

use crate::assignment::{self, AssignmentResult};
use crate::dsd::{self, Decision, DecisionKind, DsdConfig, MemoryBank};
use crate::metrics;
use crate::types::{LossMatrix, Permutation, SampleId, Waveform};
use crate::{Error, Result};

/// One weight per sequential block; all non-negative, last strictly
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    weights: Vec<f64>,
}

impl LayerWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("layer weights must be non-empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("layer weights must be finite and >= 0".into()));
        }
        if *weights.last().unwrap() <= 0.0 {
            return Err(Error::Config("last layer weight must be > 0".into()));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }
}

/// `w_i = i / n_blocks` for `i = 1..n_blocks`.
pub fn default_weights(n_blocks: usize) -> Result<LayerWeights> {
    if n_blocks == 0 {
        return Err(Error::Config("n_blocks must be >= 1".into()));
    }
    LayerWeights::new((1..=n_blocks).map(|i| i as f64 / n_blocks as f64).collect())
}

/// Per-layer source estimates: `per_layer[i]` holds block `i`'s
/// reconstructed sources.
#[derive(Debug, Clone)]
pub struct LayerOutputs {
    pub per_layer: Vec<Vec<Waveform>>,
}

impl LayerOutputs {
    pub fn n_layers(&self) -> usize {
        self.per_layer.len()
    }
}

#[derive(Debug, Clone)]
pub struct LayerwiseLoss {
    pub loss: f64,
    pub per_layer_assignments: Vec<Permutation>,
    pub per_layer_losses: Vec<f64>,
}

fn layer_matrices(outputs: &LayerOutputs, targets: &[Waveform]) -> Result<Vec<LossMatrix>> {
    outputs
        .per_layer
        .iter()
        .map(|ests| metrics::pairwise_loss_matrix(ests, targets))
        .collect()
}

/// Weighted per-layer loss with permutations chosen independently per
/// layer by `selector`.
pub fn layerwise_loss<F>(
    outputs: &LayerOutputs,
    targets: &[Waveform],
    weights: &LayerWeights,
    selector: F,
) -> Result<LayerwiseLoss>
where
    F: Fn(&LossMatrix) -> Result<AssignmentResult>,
{
    let n_layers = outputs.n_layers();
    if weights.len() != n_layers {
        return Err(Error::Config(format!(
            "{} weights for {} layers",
            weights.len(),
            n_layers
        )));
    }
    let mut per_layer_assignments = Vec::with_capacity(n_layers);
    let mut per_layer_losses = Vec::with_capacity(n_layers);
    let mut loss = 0.0;
    for (matrix, &w) in layer_matrices(outputs, targets)?.iter().zip(weights.values()) {
        let sel = selector(matrix)?;
        loss += w * sel.total_loss;
        per_layer_losses.push(sel.total_loss);
        per_layer_assignments.push(sel.permutation);
    }
    loss /= n_layers as f64;
    Ok(LayerwiseLoss {
        loss,
        per_layer_assignments,
        per_layer_losses,
    })
}

#[derive(Debug, Clone)]
pub struct LoDsdOutcome {
    /// Zero when the sample dropped out.
    pub loss: f64,
    pub decision: Decision,
    pub layerwise: Option<LayerwiseLoss>,
}

/// Combined DSD + LO for a single sample. The DSD decision comes from the
/// final layer's PIT assignment and metric; on reorder every layer's loss
/// is recomputed under the stored permutation.
pub fn lo_with_dsd(
    outputs: &LayerOutputs,
    targets: &[Waveform],
    weights: &LayerWeights,
    sample: SampleId,
    epoch: usize,
    bank: &mut MemoryBank,
    config: &DsdConfig,
) -> Result<LoDsdOutcome> {
    let n_layers = outputs.n_layers();
    if weights.len() != n_layers {
        return Err(Error::Config(format!(
            "{} weights for {} layers",
            weights.len(),
            n_layers
        )));
    }
    let matrices = layer_matrices(outputs, targets)?;
    let final_sel = assignment::pit_select(matrices.last().expect("n_layers >= 1"))?;
    let metric = -final_sel.total_loss; // loss is negated SI-SDR
    let decision = dsd::dsd_decide(sample, epoch, &final_sel.permutation, metric, bank, config)?;

    match decision.kind {
        DecisionKind::Dropout => Ok(LoDsdOutcome {
            loss: 0.0,
            decision,
            layerwise: None,
        }),
        DecisionKind::Reorder => {
            let sigma = decision.assignment_to_use.clone().expect("reorder carries sigma");
            let mut per_layer_losses = Vec::with_capacity(n_layers);
            let mut per_layer_assignments = Vec::with_capacity(n_layers);
            let mut loss = 0.0;
            for (matrix, &w) in matrices.iter().zip(weights.values()) {
                let fixed = assignment::fixed_assignment_loss(matrix, &sigma)?;
                loss += w * fixed.total_loss;
                per_layer_losses.push(fixed.total_loss);
                per_layer_assignments.push(fixed.permutation);
            }
            loss /= n_layers as f64;
            Ok(LoDsdOutcome {
                loss,
                decision,
                layerwise: Some(LayerwiseLoss {
                    loss,
                    per_layer_assignments,
                    per_layer_losses,
                }),
            })
        }
        _ => {
            let lw = layerwise_loss(outputs, targets, weights, assignment::pit_select)?;
            Ok(LoDsdOutcome {
                loss: lw.loss,
                decision,
                layerwise: Some(lw),
            })
        }
    }
}
