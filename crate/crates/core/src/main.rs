//! Command-line front end: run an experiment, compare completed runs, or
//! generate a dataset on disk.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pitlab::data::{self, DatasetConfig};
use pitlab::harness::{self, RunConfig, Strategy};

#[derive(Parser)]
#[command(name = "pitlab", about = "Permutation-invariant separation training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run {
        /// JSON run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the strategy by name (default hyperparameters).
        #[arg(long)]
        strategy: Option<String>,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Summarize completed runs side by side.
    Compare {
        /// Comma-separated run directories.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        /// Where to write the comparison JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset and export it as raw waveforms plus a manifest.
    GenData {
        /// JSON dataset configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn cmd_run(
    config_path: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    strategy: Option<String>,
    epochs: Option<usize>,
) -> ExitCode {
    let text = match fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => return fail(CONFIG_ERROR, format!("{}: {e}", config_path.display())),
    };
    let mut config: RunConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => return fail(CONFIG_ERROR, format!("{}: {e}", config_path.display())),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.out_dir = out;
    }
    if let Some(epochs) = epochs {
        config.epochs = epochs;
    }
    if let Some(name) = strategy {
        config.strategy = match Strategy::from_name(&name, config.epochs) {
            Ok(s) => s,
            Err(e) => return fail(CONFIG_ERROR, e),
        };
    }
    if let Err(e) = config.validate() {
        return fail(CONFIG_ERROR, e);
    }
    match harness::run(&config) {
        Ok(summary) => {
            println!(
                "{}: {} epochs, best validation SI-SDRi {:.4} dB (epoch {}), artifacts in {}",
                summary.strategy,
                config.epochs,
                summary.best_val_si_sdri,
                summary.best_epoch,
                config.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(RUNTIME_ERROR, e),
    }
}

fn cmd_compare(runs: Vec<PathBuf>, out: PathBuf) -> ExitCode {
    if runs.len() < 2 {
        return fail(CONFIG_ERROR, "compare needs at least two run directories");
    }
    let report = match harness::compare_dirs(&runs) {
        Ok(r) => r,
        Err(e) => return fail(RUNTIME_ERROR, e),
    };
    let json = match serde_json::to_string_pretty(&report) {
        Ok(j) => j,
        Err(e) => return fail(RUNTIME_ERROR, e),
    };
    if let Err(e) = fs::write(&out, json) {
        return fail(RUNTIME_ERROR, format!("{}: {e}", out.display()));
    }
    println!("compared {} runs -> {}", report.runs.len(), out.display());
    ExitCode::SUCCESS
}

fn cmd_gen_data(config_path: PathBuf, out: PathBuf) -> ExitCode {
    let text = match fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => return fail(CONFIG_ERROR, format!("{}: {e}", config_path.display())),
    };
    let config: DatasetConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => return fail(CONFIG_ERROR, format!("{}: {e}", config_path.display())),
    };
    if let Err(e) = config.validate() {
        return fail(CONFIG_ERROR, e);
    }
    let dataset = match data::generate(&config) {
        Ok(d) => d,
        Err(e) => return fail(RUNTIME_ERROR, e),
    };
    if let Err(e) = data::export_dataset(&dataset, &out) {
        return fail(RUNTIME_ERROR, e);
    }
    println!(
        "wrote {} samples ({} sources each) to {}",
        dataset.len(),
        config.n_sources,
        out.display()
    );
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            strategy,
            epochs,
        } => cmd_run(config, seed, out, strategy, epochs),
        Command::Compare { runs, out } => cmd_compare(runs, out),
        Command::GenData { config, out } => cmd_gen_data(config, out),
    }
}
