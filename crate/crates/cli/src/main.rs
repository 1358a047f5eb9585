//! `varinv run <config.json>` fits or samples one posterior and writes the
//! results; `varinv make-data <config.json>` writes synthetic diffusion readings.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<varinv::Error> for CliError {
    fn from(e: varinv::Error) -> Self {
        use varinv::Error as E;
        match e {
            E::Config(_) | E::DimensionMismatch { .. } | E::InvalidState(_) | E::Unsupported(_) | E::Infeasible(_) => {
                CliError::Config(e.to_string())
            }
            E::OutsideSupport(_) | E::Integration(_) | E::NonFinite(_) | E::AllRestartsDiverged(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "varinv", version, about = "Gaussian-mixture variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit (method "vi") or sample (method "mala") the configured posterior.
    Run(Common),
    /// Write synthetic sensor readings for a diffusion problem.
    MakeData(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output_dir` in the config, else `out/` next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Smaller grids and a 20k-step chain.
    #[arg(long)]
    fast: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, make) = match cli.command {
        Command::Run(a) => (a, false),
        Command::MakeData(a) => (a, true),
    };
    let overrides = config::Overrides { seed: args.seed, out: args.out, fast: args.fast };
    let result = config::load(&args.config, overrides).and_then(|r| {
        if make {
            run::make_data(&r)?;
        } else {
            run::run(&r)?;
        }
        Ok(r)
    });
    match result {
        Ok(r) => {
            println!("wrote {}", r.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
