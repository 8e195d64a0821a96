//! Batch runner for quadrature non-classicality experiments.
//!
//! Every run reads one JSON configuration, writes its tables and reports
//! into an output directory that must not already hold a run, and records a
//! `manifest.json` from which the run can be repeated exactly.

pub mod config;
pub mod error;
pub mod tasks;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{ExperimentConfig, Task};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "quadwit", version, about = "Non-classicality tests from homodyne quadrature data")]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for stochastic tasks; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `output_path`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Simulate homodyne data (per-cut datasets or a joint phase/quadrature stream).
    Sample,
    /// Evaluate a radial elementary test on simulated or stored data.
    Elementary,
    /// Optimal figure of merit G over a range of degrees.
    Optimize,
    /// Filtered back-projection estimate with kernel optimization.
    Backproject,
    /// Optimized finite-cut quadrature plans.
    FiniteCuts,
    /// Significance ratio R(M) of the elementary test over back-projection.
    Compare,
    /// Run the acceptance suite.
    Verify,
}

impl Command {
    pub fn task(self) -> Task {
        match self {
            Command::Sample => Task::Sample,
            Command::Elementary => Task::Elementary,
            Command::Optimize => Task::Optimize,
            Command::Backproject => Task::Backproject,
            Command::FiniteCuts => Task::FiniteCuts,
            Command::Compare => Task::Compare,
            Command::Verify => Task::Verify,
        }
    }
}

/// Record of a completed run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    /// Configuration reproducing the run, with every default resolved.
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub outputs: Vec<String>,
}

/// Summary of a completed run.
#[derive(Debug)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub lines: Vec<String>,
    pub manifest: RunManifest,
}

/// Executes one command line. Failed acceptance criteria are reported after
/// the outputs and manifest are written.
pub fn run(cli: &Cli) -> Result<RunReport, CliError> {
    let task = cli.command.task();
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(declared) = config.task {
        if declared != task {
            return Err(CliError::Config {
                pointer: "/task".into(),
                message: format!("config is for `{}`, not `{}`", declared.name(), task.name()),
            });
        }
    }
    config.model.validate()?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    let seed = cli.seed.or(config.seed);
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("quadwit-out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        return Err(CliError::Usage(format!(
            "{} already holds a run; outputs are write-once",
            dir.display()
        )));
    }
    let output = match task {
        Task::Sample => tasks::sample(&config, seed, &dir),
        Task::Elementary => tasks::elementary(&config, seed, &dir),
        Task::Optimize => tasks::optimize(&config, seed, &dir),
        Task::Backproject => tasks::backproject(&config, seed, &dir),
        Task::FiniteCuts => tasks::finite_cuts(&config, seed, &dir),
        Task::Compare => tasks::compare(&config, seed, &dir),
        Task::Verify => tasks::verify(&config, seed, &dir),
    }?;
    config.task = Some(task);
    config.params = output.params;
    config.seed = seed;
    config.output_path = None;
    let manifest = RunManifest {
        version: format!("quadwit {}", env!("CARGO_PKG_VERSION")),
        config,
        threads: cli.threads,
        outputs: output.files,
    };
    quadwit::io::write_json(&manifest_path, &manifest)?;
    if !output.failed.is_empty() {
        for line in &output.lines {
            println!("{line}");
        }
        return Err(CliError::VerificationFailed(output.failed));
    }
    Ok(RunReport {
        output_dir: dir,
        lines: output.lines,
        manifest,
    })
}
