//! `fairdcov` command line.
//!
//! ```text
//! fairdcov prep      --config run.toml
//! fairdcov tune      --config run.toml
//! fairdcov calibrate --config run.toml --regulariser ccdcov --seeds 3
//! fairdcov train     --config run.toml --regulariser ccdcov --lambda 20
//! fairdcov evaluate  --config run.toml
//! fairdcov report    --config run.toml
//! ```
//!
//! Exit status is 0 on success, 2 for configuration or schema errors and 1
//! for any other failure. `FAIRDCOV_THREADS` caps the worker threads; a
//! value of 1 (or `--deterministic`) runs everything on one thread.

mod bundle;
mod commands;
mod config;
mod figures;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use fairdcov::model::RegulariserKind;

use commands::{CalibrateArgs, Ctx, TrainArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "fairdcov",
    version,
    about = "Fairness-regularised training with distance-covariance penalties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the bundle directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Single worker thread.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, split and fit the frozen preprocessing.
    Prep(Common),
    /// Cross-validated hyperparameter search without regularisation.
    Tune(Common),
    /// Lambda grid over several seeds; writes curves and CSVs.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, counting up from the base seed.
        #[arg(long, value_name = "N")]
        seeds: Option<usize>,
        #[arg(long, value_parser = parse_kind)]
        regulariser: Option<RegulariserKind>,
        /// Comma-separated lambda values, e.g. "0,5,20".
        #[arg(long, value_parser = parse_grid)]
        grid: Option<Grid>,
    },
    /// Fits the baseline and the regularised model on all training rows.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "X")]
        lambda: Option<f64>,
        #[arg(long, value_parser = parse_kind)]
        regulariser: Option<RegulariserKind>,
    },
    /// Scores both models on the held-out test split (once per bundle).
    Evaluate(Common),
    /// Figures and a summary from the evaluation.
    Report(Common),
}

fn parse_kind(s: &str) -> Result<RegulariserKind, String> {
    s.parse::<RegulariserKind>().map_err(|e| e.to_string())
}

#[derive(Clone)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Grid)
}

fn context(common: &Common) -> Result<Ctx> {
    let cfg = RunConfig::load(&common.config)?;
    Ok(Ctx {
        config_path: common.config.clone(),
        seed: common.seed.unwrap_or(cfg.seed),
        out: common.out.clone().unwrap_or_else(|| cfg.out.clone()),
        cfg,
    })
}

fn threads(deterministic: bool) -> Result<()> {
    let n = match std::env::var("FAIRDCOV_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            fairdcov::Error::Config(format!(
                "FAIRDCOV_THREADS must be a positive integer, got {v:?}"
            ))
        })?),
        Err(_) => None,
    };
    let n = if deterministic { Some(1) } else { n };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| anyhow::anyhow!(e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Prep(c) | Command::Tune(c) | Command::Evaluate(c) | Command::Report(c) => c,
        Command::Calibrate { common, .. } | Command::Train { common, .. } => common,
    };
    threads(common.deterministic)?;
    let ctx = context(common)?;
    match &cli.command {
        Command::Prep(_) => commands::prep(&ctx),
        Command::Tune(_) => commands::tune(&ctx),
        Command::Calibrate {
            seeds,
            regulariser,
            grid,
            ..
        } => commands::calibrate(
            &ctx,
            &CalibrateArgs {
                seeds: *seeds,
                regulariser: *regulariser,
                grid: grid.as_ref().map(|g| g.0.clone()),
            },
        ),
        Command::Train {
            lambda,
            regulariser,
            ..
        } => commands::train_cmd(
            &ctx,
            &TrainArgs {
                lambda: *lambda,
                regulariser: *regulariser,
            },
        ),
        Command::Evaluate(_) => commands::evaluate(&ctx),
        Command::Report(_) => commands::report(&ctx),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config_error = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<fairdcov::Error>(),
            Some(fairdcov::Error::Config(_) | fairdcov::Error::Schema(_))
        )
    });
    if config_error {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
