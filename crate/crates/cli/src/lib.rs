//! Command-line front end for the nonlocal NOPA simulator.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or input error, 3 failed
//! self-test.

mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{CliConfig, Combos, Format, Grid};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::SelfTest(_) => 3,
        }
    }
}

/// Every core error reachable from the CLI stems from its inputs.
impl From<nopa_core::Error> for CliError {
    fn from(e: nopa_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "nopa", version, about = "Nonlocal NOPA simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact transfer, output variances and added noise for one setting.
    Run(RunArgs),
    /// CSV/JSON table over a grid of reflectivity and squeezing.
    Sweep(SweepArgs),
    /// Inseparability criteria on the four-mode resource or a state file.
    Criteria(CriteriaArgs),
    /// Sampled pipeline checked against the exact moments.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Beam splitter reflectivity R in [0, 1).
    #[arg(short = 'R', long)]
    pub reflectivity: Option<f64>,
    /// Squeezing of the first EPR pair.
    #[arg(long)]
    pub r1: Option<f64>,
    /// Squeezing of the second EPR pair.
    #[arg(long)]
    pub r2: Option<f64>,
    /// Protocol rounds to simulate.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Falls back to NOPA_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the result to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Machine-readable output instead of text.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Include the Heisenberg ledger in the output.
    #[arg(long)]
    pub emit_ledger: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Reflectivity grid start:stop:step.
    #[arg(long = "grid-R")]
    pub grid_reflectivity: Option<Grid>,
    /// Squeezing grid start:stop:step, applied to r1 and r2.
    #[arg(long)]
    pub grid_r: Option<Grid>,
}

#[derive(Debug, Clone, Args)]
pub struct CriteriaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub combos: Option<Combos>,
    /// Four-mode state in the JSON state format.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also run the message-passing stations and require identical results.
    #[arg(long)]
    pub network: bool,
}

impl Common {
    /// Config file, then `NOPA_SEED`, overlaid by flags.
    fn resolve(&self, seed_env: Option<&str>, extra: CliConfig) -> Result<CliConfig, CliError> {
        let mut base = match &self.config {
            Some(path) => CliConfig::load(path)?,
            None => CliConfig::default(),
        };
        if base.seed.is_none() {
            base.seed = config::seed_from_env(seed_env)?;
        }
        let flags = CliConfig {
            reflectivity: self.reflectivity,
            r1: self.r1,
            r2: self.r2,
            shots: self.shots,
            seed: self.seed,
            output: self.output.clone(),
            format: self.format,
            emit_ledger: self.emit_ledger.then_some(true),
            ..extra
        };
        Ok(base.overlay(flags))
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// reports to `out`.
pub fn run<I, T>(args: I, seed_env: Option<&str>, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    dispatch(&cli.command, seed_env, out)
}

pub fn dispatch(command: &Command, seed_env: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Run(a) => commands::run(&a.common.resolve(seed_env, CliConfig::default())?, out),
        Command::Sweep(a) => {
            let extra = CliConfig {
                grid_reflectivity: a.grid_reflectivity,
                grid_r: a.grid_r,
                ..Default::default()
            };
            commands::sweep(&a.common.resolve(seed_env, extra)?, out)
        }
        Command::Criteria(a) => {
            let extra = CliConfig {
                combos: a.combos,
                state: a.state.clone(),
                ..Default::default()
            };
            commands::criteria(&a.common.resolve(seed_env, extra)?, out)
        }
        Command::Montecarlo(a) => {
            let extra = CliConfig {
                network: a.network.then_some(true),
                ..Default::default()
            };
            commands::montecarlo(&a.common.resolve(seed_env, extra)?, out)
        }
    }
}

/// Full entry point: help and version go to `out` with status 0, errors to
/// `err` with their exit code.
pub fn main_with<I, T>(args: I, seed_env: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match dispatch(&cli.command, seed_env, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
