use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("waveform must contain at least one sample")]
    EmptyWaveform,
    #[error("waveform contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("target signal is identically zero")]
    ZeroTarget,
    #[error("count mismatch: {0} estimates vs {1} targets")]
    CountMismatch(usize, usize),
    #[error("loss matrix must be square, got {rows}x{cols}")]
    NonSquareMatrix { rows: usize, cols: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("permutation of size {perm} does not match size {expected}")]
    PermutationSize { perm: usize, expected: usize },
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("iterations must be at least 1")]
    ZeroIterations,
    #[error("relaxation factor must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("sample {0} unknown to the memory bank after the first epoch")]
    UnknownSample(u64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
