//! `aoii`: solve, evaluate, simulate and sweep AoII transmission policies.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 invalid input.

mod commands;
mod config;
mod output;
mod validate;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "aoii",
    version,
    about = "Transmission policies for Age of Incorrect Information over HARQ channels"
)]
struct Cli {
    /// Print every configurable default as TOML and exit.
    #[arg(long, global = true)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file overriding the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Simulation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Starting AoII cap for the value iterations.
    #[arg(long, global = true)]
    pub delta_cap: Option<u32>,
    /// Span tolerance of the value iterations.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

impl Common {
    /// Defaults, then the config file, then flags.
    pub fn config(&self) -> Result<Config, CliError> {
        let mut cfg = Config::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.simulation.seed = seed;
        }
        if let Some(cap) = self.delta_cap {
            cfg.solver.delta_cap = cap;
            cfg.solver.max_delta_cap = cfg.solver.max_delta_cap.max(cap);
        }
        if let Some(tol) = self.tol {
            cfg.solver.rvi_tol = tol;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(&self.out)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the rate-constrained policy of one family.
    Solve(commands::SolveArgs),
    /// Closed-form average AoII and rate of a policy file.
    Evaluate(commands::EvaluateArgs),
    /// Monte-Carlo estimate for a policy file.
    Simulate(commands::SimulateArgs),
    /// Average AoII versus rate for several families.
    Sweep(commands::SweepArgs),
    /// Run the consistency checks on a model and write a JSON report.
    Validate(commands::ValidateArgs),
    /// Write a random biased-diagonal source as a model file.
    GenSource(commands::GenSourceArgs),
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(err: impl fmt::Display) -> Self {
        Self::failure(err.to_string())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::failure(format!("{}: {err}", path.display()))
    }
}

impl From<aoii_core::Error> for CliError {
    fn from(err: aoii_core::Error) -> Self {
        use aoii_core::Error as E;
        let code = match err {
            E::InvalidInput(_) | E::Domain(_) | E::ModelViolation(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Reads a file the user pointed at; a missing file is an input error.
pub fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.print_defaults {
        print!("{}", Config::default().to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (try --help)");
        return ExitCode::from(2);
    };
    let result = match command {
        Command::Solve(a) => commands::solve(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::GenSource(a) => commands::gen_source(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
