//! Signal-quality metrics (SI-SDR family), used both as the training
//! objective and as the sample-dropout evaluation metric.

use serde::{Deserialize, Serialize};

use crate::types::{LossMatrix, Waveform};
use crate::{Error, Result};

/// Guard added to every log/ratio denominator. The guard-determined
/// maximum (about 80 dB at unit-energy signals) caps perfect
/// reconstruction.
pub const GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SiSdr,
    Sdr,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(estimate: &Waveform, target: &Waveform) -> Result<()> {
    if estimate.len() != target.len() {
        return Err(Error::LengthMismatch(estimate.len(), target.len()));
    }
    if target.samples().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroTarget);
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// The estimate is projected onto the target (`alpha = <e,t>/(<t,t>+d)`)
/// and the ratio of projected-signal to residual energy is reported. The
/// guard is applied in the projection-normalized frame (estimate divided
/// by `alpha`), so rescaling the estimate changes nothing — including at
/// the guard-determined maximum for perfect reconstructions.
pub fn si_sdr(estimate: &Waveform, target: &Waveform) -> Result<f64> {
    check_pair(estimate, target)?;
    let t = target.samples();
    let e = estimate.samples();
    let t_energy = dot(t, t);
    let alpha = dot(e, t) / (t_energy + GUARD);
    if alpha == 0.0 {
        // estimate exactly orthogonal to the target: no projected signal
        return Ok(10.0 * (GUARD / (dot(e, e) + GUARD)).log10());
    }
    let inv_alpha = 1.0 / alpha;
    let err_energy: f64 = e
        .iter()
        .zip(t)
        .map(|(&ev, &tv)| {
            let r = ev * inv_alpha - tv;
            r * r
        })
        .sum();
    Ok(10.0 * ((t_energy + GUARD) / (err_energy + GUARD)).log10())
}

/// Plain signal-to-distortion ratio in dB: `10 log10(|t|^2 / |t - e|^2)`.
/// Unlike [`si_sdr`] this is not invariant to estimate rescaling.
pub fn sdr(estimate: &Waveform, target: &Waveform) -> Result<f64> {
    check_pair(estimate, target)?;
    let t_energy = target.energy();
    let err_energy: f64 = estimate
        .samples()
        .iter()
        .zip(target.samples())
        .map(|(&e, &t)| (t - e) * (t - e))
        .sum();
    Ok(10.0 * ((t_energy + GUARD) / (err_energy + GUARD)).log10())
}

/// Improvement over the raw mixture: `metric(e, t) - metric(x, t)`.
pub fn metric_improvement(
    estimate: &Waveform,
    target: &Waveform,
    mixture: &Waveform,
    metric: Metric,
) -> Result<f64> {
    let eval = match metric {
        Metric::SiSdr => si_sdr,
        Metric::Sdr => sdr,
    };
    Ok(eval(estimate, target)? - eval(mixture, target)?)
}

/// Pairwise loss matrix with `loss = -si_sdr`; `entries[i][j]` pairs
/// estimate `i` with target `j`. Input to every assignment strategy.
pub fn pairwise_loss_matrix(estimates: &[Waveform], targets: &[Waveform]) -> Result<LossMatrix> {
    if estimates.len() != targets.len() || estimates.is_empty() {
        return Err(Error::CountMismatch(estimates.len(), targets.len()));
    }
    let n = estimates.len();
    let mut entries = Vec::with_capacity(n * n);
    for est in estimates {
        for tgt in targets {
            entries.push(-si_sdr(est, tgt)?);
        }
    }
    LossMatrix::from_flat(n, entries)
}
