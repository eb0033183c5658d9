//! `hfactor`: simulate factor diffusions, estimate, test and run Monte Carlo
//! experiments from JSON configs.
//!
//! Exit codes: 0 success, 1 other runtime failure, 2 configuration error,
//! 3 non-convergence, 4 untestable factor count.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hfactor",
    version,
    about = "Factor models for high-frequency diffusion data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (directory for `experiment`). Reports go to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed; replaces `seed` (simulate) or `seed_base` (experiment).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Edit the config: dotted JSON path `=` value. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,
    /// Worker threads for `experiment`; all cores by default.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a sample path from a simulation config.
    Simulate,
    /// Realised covariance of a path file.
    Rcov(DataArgs),
    /// Minimum-contrast fit with `k` factors.
    Fit(DataArgs),
    /// Test `H0: k factors` against the saturated model.
    Test(DataArgs),
    /// Sequential selection of the number of factors.
    Select(DataArgs),
    /// Monte Carlo experiment; writes tables, figure data and a manifest.
    Experiment,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Path file (CSV, or binary with extension .bin/.hfsp).
    #[arg(long)]
    pub data: PathBuf,
    /// Number of factors; replaces `k` in the config.
    #[arg(long)]
    pub k: Option<usize>,
}

pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NOT_CONVERGED: u8 = 3;
    pub const UNTESTABLE: u8 = 4;
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
