//! `wide`: run WIDE minimizations, reference time steps, limit sweeps and the
//! self-test from a TOML config.
//!
//! Exit status: 0 on success, 1 on solver failure, 2 on config or output errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use commands::{Outputs, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Minimize the WIDE functional and check the Euler–Lagrange system.
    Minimize,
    /// Run an implicit reference stepper and write its energy ledger.
    Timestep,
    /// Run the configured parameter sweep.
    Sweep,
    /// Tabulate Γ-recovery gaps along `sweep.rho`.
    Gamma,
    /// Run the invariant suite.
    Selftest,
}

#[derive(Debug, Parser)]
#[command(name = "wide", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run description; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for the random probes of `selftest`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let cfg = match &cli.config {
        Some(path) => config::parse_config(path)?,
        None => config::parse_str("")?,
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(RunError::Config(config::ConfigError {
                key: "--threads".into(),
                message: "must be at least 1".into(),
            }));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Output(format!("thread pool: {e}")))?;
    }
    let out = Outputs::new(&cli.out)?;
    match cli.command {
        Command::Minimize => commands::minimize(&cfg, &out),
        Command::Timestep => commands::timestep(&cfg, &out),
        Command::Sweep => commands::run_sweep(&cfg, &out),
        Command::Gamma => commands::gamma(&cfg, &out),
        Command::Selftest => commands::selftest(cli.seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
