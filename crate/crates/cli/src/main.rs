//! `chbc`: state solves, boundary control, gradient checks and property
//! verification for the Cahn-Hilliard system with dynamic boundary
//! conditions.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 solver failure,
//! 3 optimizer iteration cap, 4 verification failure.

mod commands;
mod config;
mod error;
mod profile;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Problem, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "chbc", version, about = "Cahn-Hilliard boundary control driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides `[output] directory`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress reports on stdout; only errors are logged.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the state equation at the configured control.
    State { config: PathBuf },
    /// Minimize the tracking cost over admissible boundary controls.
    Optimize { config: PathBuf },
    /// Compare the reduced gradient with central differences.
    GradCheck { config: PathBuf },
    /// Run every property suite and print a pass/fail table.
    Verify { config: PathBuf },
    /// Compare the admissible-set projection against the reference oracle.
    Project { config: PathBuf },
}

impl Command {
    fn config(&self) -> &PathBuf {
        match self {
            Command::State { config }
            | Command::Optimize { config }
            | Command::GradCheck { config }
            | Command::Verify { config }
            | Command::Project { config } => config,
        }
    }
}

fn run(cli: &Cli) -> CliResult<String> {
    let path = cli.command.config();
    let config = RunConfig::load(path)?;
    let problem = Problem::from_config(config, path, cli.output_dir.clone(), cli.seed)?;
    match cli.command {
        Command::State { .. } => commands::state(&problem),
        Command::Optimize { .. } => commands::optimize(&problem),
        Command::GradCheck { .. } => commands::grad_check(&problem),
        Command::Verify { .. } => commands::verify(&problem),
        Command::Project { .. } => commands::project(&problem),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(report) => {
            if !cli.quiet {
                print!("{report}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Verification(report) => {
                    if !cli.quiet {
                        print!("{report}");
                    }
                    log::error!("verification failed");
                }
                _ => log::error!("{e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
