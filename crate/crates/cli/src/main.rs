//! `nhhj`: simulate nonholonomic systems, check candidate Hamilton–Jacobi
//! solutions and compare reduced and full flows.
//!
//! Exit codes: 0 success, 1 failed check or integration, 2 invalid input.

mod commands;
mod config;
mod output;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn invalid<E: Display>(e: E) -> Self {
        Self::Invalid(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 2,
            Self::Failed(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "nhhj", version, about = "Nonholonomic Hamiltonian mechanics and Hamilton-Jacobi checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the nonholonomic Hamiltonian flow and write the trajectory as CSV.
    Simulate(RunArgs),
    /// Check a candidate one-form against the Hamilton-Jacobi conditions; writes JSON.
    VerifyHj(RunArgs),
    /// Bracket-generating rank and regularity at sample points; writes JSON.
    CheckStructure(RunArgs),
    /// Integrate the reduced and full flows side by side; writes CSV.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; overrides the configuration. Standard output when neither is set.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Sampling seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

type Handler = fn(config::Resolved, Option<PathBuf>) -> Result<(), CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, cmd): (RunArgs, Handler) = match cli.command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::VerifyHj(a) => (a, commands::verify_hj),
        Command::CheckStructure(a) => (a, commands::check_structure),
        Command::Compare(a) => (a, commands::compare),
    };
    let resolved = config::resolve(config::load(&args.config)?, args.seed)?;
    cmd(resolved, args.output)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nhhj: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
