//! `morrey-sde`: config-driven experiments on SDEs with Morrey-integrable
//! coefficients.
//!
//! Every command prints one JSON report on stdout (and writes it, together
//! with any streams, to the output directory if one is set). Exit status is
//! 0 when all checks pass, 1 when a check fails and 2 on usage or config
//! errors.

// Range checks are written as `!(x > 0.0)` on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::Context;
use config::ExperimentConfig;
use report::OutputDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] morrey_sde::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e {
                morrey_sde::Error::InvalidInput(_) | morrey_sde::Error::Io(_) => 2,
                _ => 1,
            },
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "morrey-sde",
    version,
    about = "Numerical experiments for SDEs with Morrey-integrable coefficients"
)]
struct Cli {
    /// Experiment config (TOML); built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for the report and streams (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Restricts `verify` to one tag: coeffs, pde, chaos or sde.
    #[arg(long, global = true, value_name = "TAG")]
    filter: Option<String>,
    /// Worker threads for parallel numerics.
    #[arg(long, global = true, value_name = "N", env = "MORREY_SDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Eigenvalue band, Morrey suprema, β-moduli and the drift cylinder norm.
    Check,
    /// Solves the exponent system and classifies the drift regime.
    Exponents,
    /// Chaos kernels, Parseval ladder and strongness tails.
    Chaos,
    /// Euler–Maruyama batches, Girsanov weights, Krylov and strongness checks.
    Simulate,
    /// Runs the acceptance criteria.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Exponents => "exponents",
            Command::Chaos => "chaos",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let c = ExperimentConfig::default();
            c.validate()?;
            c
        }
    };
    if cli.filter.is_some() && !matches!(cli.command, Command::Verify) {
        return Err(CliError::Usage("--filter only applies to verify".into()));
    }
    let out = OutputDir::new(cli.out.clone().or_else(|| config.output.dir.clone()))?;
    let ctx = Context {
        config,
        seed: cli.seed,
        filter: cli.filter.clone(),
        out,
    };
    let start = Instant::now();
    let mut report = match cli.command {
        Command::Check => commands::check(&ctx)?,
        Command::Exponents => commands::exponents(&ctx)?,
        Command::Chaos => commands::chaos(&ctx)?,
        Command::Simulate => commands::simulate(&ctx)?,
        Command::Verify => commands::verify(&ctx)?,
    };
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    ctx.out.report(&report)?;
    println!("{}", report.to_json());
    eprintln!(
        "{}: {}",
        cli.command.name(),
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
