//! Desk-scale laboratory for studying label-assignment dynamics in
//! permutation invariant training (PIT) of source-separation models.
//!
//! The crate bundles:
//! - signal-quality metrics (SI-SDR family) in [`metrics`],
//! - label-assignment strategies (exhaustive PIT, Hungarian, PIT-fix,
//!   SinkPIT) in [`assignment`],
//! - dynamic sample dropout with its per-sample memory bank in [`dsd`],
//! - layer-wise optimization over intermediate reconstructions in [`lo`],
//! - a small reverse-mode autodiff engine plus Adam / gradient clipping /
//!   LR plateau scheduling in [`autodiff`],
//! - a toy time-domain masking separator in [`model`],
//! - a deterministic synthetic mixture generator in [`data`],
//! - switching-ratio and layer-decoupling instrumentation in [`analysis`],
//! - and the experiment runner / CLI backend in [`harness`].

pub mod analysis;
pub mod assignment;
pub mod autodiff;
pub mod data;
pub mod dsd;
mod error;
pub mod harness;
pub mod lo;
pub mod metrics;
pub mod model;
pub mod types;

pub use error::{Error, Result};
