//! `therminv`: batch front end of the estimation toolkit.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{ModelKind, Output};
use config::{Parameters, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "therminv",
    version,
    about = "Surface heat transfer coefficient estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Chamber defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Escalate the DuFort-Frankel consistency warning to an error.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve; writes the field, sensor series and diagnostics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lumped")]
        model: ModelKind,
        /// JSON with h_t, r_l (and optionally h_l), or an estimate summary.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Sensitivity fields, Fisher matrix and correlation table.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Approximation error model between the lumped and complete models.
    Aem {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Metropolis-Hastings estimation of h_t and R_l.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Directory with dataset.csv (and optionally sensors.csv).
        #[arg(long)]
        data: PathBuf,
        /// aem.csv written by `aem`; the sidecar aem.json must sit next to it.
        #[arg(long)]
        aem: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Lumped vs complete model at the sensors, with timings.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Noisy repeats from a forward model, plus the assembled dataset.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "complete")]
        model: ModelKind,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Assembles repeat_*.csv files of a directory into a dataset.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

fn load(common: &Common) -> CliResult<config::Resolved> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse("")?,
    };
    cfg.resolve(common.strict)
}

fn params_or(r: &config::Resolved, path: &Option<PathBuf>) -> CliResult<Parameters> {
    match path {
        Some(p) => commands::read_params(p),
        None => Ok(r.raw.parameters),
    }
}

/// Caps rayon's pool when `THERMINV_THREADS` is set.
fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("THERMINV_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "THERMINV_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate {
            common,
            model,
            params,
        } => {
            let r = load(&common)?;
            let p = params_or(&r, &params)?;
            commands::simulate(&r, model, p, &Output::new(&common.out, "simulate")?)
        }
        Command::Sensitivity { common, params } => {
            let r = load(&common)?;
            let p = params_or(&r, &params)?;
            commands::sensitivity(&r, p, &Output::new(&common.out, "sensitivity")?)
        }
        Command::Aem { common, seed } => {
            let r = load(&common)?;
            commands::aem(&r, seed, &Output::new(&common.out, "aem")?)
        }
        Command::Estimate {
            common,
            data,
            aem,
            seed,
        } => {
            let r = load(&common)?;
            commands::estimate(
                &r,
                &data,
                aem.as_deref(),
                seed,
                &Output::new(&common.out, "estimate")?,
            )
        }
        Command::Validate { common, params } => {
            let r = load(&common)?;
            let p = params_or(&r, &params)?;
            commands::validate(&r, p, &Output::new(&common.out, "validate")?)
        }
        Command::Synthesize {
            common,
            model,
            params,
            seed,
        } => {
            let r = load(&common)?;
            let p = params_or(&r, &params)?;
            commands::synthesize(&r, model, p, seed, &Output::new(&common.out, "synthesize")?)
        }
        Command::Ingest { common, data } => {
            let r = load(&common)?;
            commands::ingest(&r, &data, &Output::new(&common.out, "ingest")?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
