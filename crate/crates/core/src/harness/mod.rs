//! Experiment runner: run configuration, the training loop, and
//! cross-run comparison.

pub mod compare;
pub mod config;
pub mod run;

pub use compare::{compare_dirs, ComparisonReport, RunComparison};
pub use config::{RunConfig, Strategy};
pub use run::{run, train, EpochRecord, RunSummary};
