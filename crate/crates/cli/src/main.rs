//! `nbf`: train, certify, validate and plot neural barrier functions.
//!
//! Exit codes: 0 success (or certified), 1 runtime failure, 2 bad usage or
//! configuration, 3 non-finite training loss, 4 a barrier condition is
//! violated, 5 certification is inconclusive.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbf::relaxation::BoundMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] nbf::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(nbf::Error::NonFiniteLoss { .. }) => 3,
            CliError::Core(nbf::Error::InvalidConfig(_) | nbf::Error::DimensionMismatch { .. }) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nbf", version, about = "Neural stochastic barrier functions")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a barrier network; writes net.json and metrics.csv to --out.
    Train(TrainArgs),
    /// Certify a network and print the report as JSON.
    Certify(CertifyArgs),
    /// Estimate the safety probability by simulation.
    Validate(ValidateArgs),
    /// Write a grid of barrier values and certified cell bounds as CSV.
    ExportContours(ContourArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `training.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `certification.t_gap`.
    #[arg(long)]
    pub t_gap: Option<f64>,
    /// Overrides `certification.mode`.
    #[arg(long)]
    pub mode: Option<BoundMode>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub n_traj: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial states sampled from X_0; the worst one is reported.
    #[arg(long, default_value_t = 100)]
    pub x0_samples: usize,
    /// Safe states at which the one-step drift `E[B(F(x)+v)] - B(x)` is sampled.
    #[arg(long, default_value_t = 100)]
    pub drift_points: usize,
    #[arg(long, default_value_t = 1000)]
    pub drift_samples: usize,
    /// Certification report to compare against.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Cells along the two plotted axes, as `WxH`.
    #[arg(long, default_value = "320x320")]
    pub grid: String,
    /// Fixes one coordinate of a 3-D system, as `dim=value`.
    #[arg(long)]
    pub slice: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Certify(a) => commands::certify(a),
        Command::Validate(a) => commands::validate(a),
        Command::ExportContours(a) => commands::export_contours(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
