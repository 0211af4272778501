//! Python bindings for the core metrics, assignment strategies, sample
//! dropout test, and dataset generator.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pitlab::types::{LossMatrix, Permutation, Waveform};
use pitlab::{analysis, assignment, data, dsd, lo, metrics};

fn err(e: pitlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn waveform(samples: Vec<f64>) -> PyResult<Waveform> {
    Waveform::new(samples).map_err(err)
}

fn waveforms(signals: Vec<Vec<f64>>) -> PyResult<Vec<Waveform>> {
    signals.into_iter().map(waveform).collect()
}

fn loss_matrix(rows: Vec<Vec<f64>>) -> PyResult<LossMatrix> {
    LossMatrix::from_rows(&rows).map_err(err)
}

fn matrix_rows(m: &LossMatrix) -> Vec<Vec<f64>> {
    (0..m.n())
        .map(|i| (0..m.n()).map(|j| m.get(i, j)).collect())
        .collect()
}

fn parse_metric(name: &str) -> PyResult<metrics::Metric> {
    match name {
        "si_sdr" => Ok(metrics::Metric::SiSdr),
        "sdr" => Ok(metrics::Metric::Sdr),
        other => Err(PyValueError::new_err(format!(
            "unknown metric {other:?} (expected 'si_sdr' or 'sdr')"
        ))),
    }
}

/// Scale-invariant signal-to-distortion ratio in dB.
#[pyfunction]
fn si_sdr(estimate: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    metrics::si_sdr(&waveform(estimate)?, &waveform(target)?).map_err(err)
}

/// Plain signal-to-distortion ratio in dB.
#[pyfunction]
fn sdr(estimate: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    metrics::sdr(&waveform(estimate)?, &waveform(target)?).map_err(err)
}

/// `metric(estimate, target) - metric(mixture, target)` in dB.
#[pyfunction]
#[pyo3(signature = (estimate, target, mixture, metric = "si_sdr"))]
fn metric_improvement(
    estimate: Vec<f64>,
    target: Vec<f64>,
    mixture: Vec<f64>,
    metric: &str,
) -> PyResult<f64> {
    metrics::metric_improvement(
        &waveform(estimate)?,
        &waveform(target)?,
        &waveform(mixture)?,
        parse_metric(metric)?,
    )
    .map_err(err)
}

/// N x N matrix of `-si_sdr(estimate_i, target_j)`.
#[pyfunction]
fn pairwise_loss_matrix(
    estimates: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let m = metrics::pairwise_loss_matrix(&waveforms(estimates)?, &waveforms(targets)?)
        .map_err(err)?;
    Ok(matrix_rows(&m))
}

/// Minimum-mean-loss assignment: `(mapping, total_loss)`.
#[pyfunction]
fn pit_select(matrix: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let r = assignment::pit_select(&loss_matrix(matrix)?).map_err(err)?;
    Ok((r.permutation.mapping().to_vec(), r.total_loss))
}

/// Hungarian-algorithm assignment: `(mapping, total_loss)`.
#[pyfunction]
fn hungarian_select(matrix: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let r = assignment::hungarian_select(&loss_matrix(matrix)?).map_err(err)?;
    Ok((r.permutation.mapping().to_vec(), r.total_loss))
}

/// Mean loss under a caller-supplied assignment.
#[pyfunction]
fn fixed_assignment_loss(matrix: Vec<Vec<f64>>, mapping: Vec<usize>) -> PyResult<f64> {
    let perm = Permutation::new(mapping).map_err(err)?;
    let r = assignment::fixed_assignment_loss(&loss_matrix(matrix)?, &perm).map_err(err)?;
    Ok(r.total_loss)
}

/// Sinkhorn soft assignment: `(soft_loss, gamma)` where gamma is doubly
/// stochastic.
#[pyfunction]
#[pyo3(signature = (matrix, beta, iterations = 50))]
fn sinkpit_loss(
    matrix: Vec<Vec<f64>>,
    beta: f64,
    iterations: usize,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (soft, plan) = assignment::sinkpit_loss(&loss_matrix(matrix)?, beta, iterations)
        .map_err(err)?;
    let n = plan.n();
    let gamma = (0..n)
        .map(|i| (0..n).map(|j| plan.gamma(i, j)).collect())
        .collect();
    Ok((soft, gamma))
}

/// Relaxed-better test `m_cur * (1 + sgn(m_cur) * eps) > m_best`;
/// `eps = inf` always passes.
#[pyfunction]
fn relaxed_better(m_cur: f64, m_best: f64, epsilon: f64) -> PyResult<bool> {
    dsd::relaxed_better(m_cur, m_best, epsilon).map_err(err)
}

/// Default layer-loss weights `i / n_blocks` for `i = 1..n_blocks`.
#[pyfunction]
fn default_layer_weights(n_blocks: usize) -> PyResult<Vec<f64>> {
    Ok(lo::default_weights(n_blocks).map_err(err)?.values().to_vec())
}

/// L1 distance between two switching-ratio curves, in percentage points.
#[pyfunction]
fn curve_l1_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analysis::curve_l1_distance(
        &analysis::SwitchCurve { values: a },
        &analysis::SwitchCurve { values: b },
    )
    .map_err(err)
}

/// Deterministic synthetic dataset: list of `(mixture, [targets])`.
#[pyfunction]
#[pyo3(signature = (n_samples, n_sources, sample_length, seed, noisy = false, noise_snr_db = 10.0))]
fn generate_dataset(
    n_samples: usize,
    n_sources: usize,
    sample_length: usize,
    seed: u64,
    noisy: bool,
    noise_snr_db: f64,
) -> PyResult<Vec<(Vec<f64>, Vec<Vec<f64>>)>> {
    let config = data::DatasetConfig {
        n_samples,
        n_sources,
        sample_length,
        noise: if noisy {
            data::NoiseMode::Noisy
        } else {
            data::NoiseMode::Clean
        },
        noise_snr_db,
        seed,
    };
    let samples = data::generate(&config).map_err(err)?;
    Ok(samples
        .into_iter()
        .map(|s| {
            (
                s.mixture.samples().to_vec(),
                s.targets.iter().map(|t| t.samples().to_vec()).collect(),
            )
        })
        .collect())
}

#[pymodule]
fn pitlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(sdr, m)?)?;
    m.add_function(wrap_pyfunction!(metric_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_loss_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(pit_select, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian_select, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_assignment_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sinkpit_loss, m)?)?;
    m.add_function(wrap_pyfunction!(relaxed_better, m)?)?;
    m.add_function(wrap_pyfunction!(default_layer_weights, m)?)?;
    m.add_function(wrap_pyfunction!(curve_l1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    Ok(())
}
