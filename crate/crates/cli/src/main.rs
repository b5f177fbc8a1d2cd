//! `lmpgan`: ingest -> train -> predict -> calibrate -> evaluate -> render.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};

use config::{RunConfig, Source};

/// Environment variable holding the log filter (default `info`).
const LOG_ENV: &str = "LMPGAN_LOG";
const DEFAULT_CONFIG: &str = "lmpgan.toml";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] lmpgan::Error),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numeric divergence.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Core(lmpgan::Error::Config(_)) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }

    fn into_core(self) -> lmpgan::Error {
        match self {
            CliError::Core(e) => e,
            other => lmpgan::Error::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lmpgan", version, about = "Next-hour zonal price prediction with a video GAN")]
struct Cli {
    /// Run configuration (TOML). Defaults to ./lmpgan.toml when present.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set gan.max_iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic market CSV.
    Synth {
        /// Number of hours (default `synth.hours`).
        #[arg(long)]
        hours: Option<usize>,
        /// Output path (default `paths.data`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate and normalize the market CSV.
    Ingest,
    /// Train the GAN, checkpointing at every evaluation.
    Train {
        /// Continue from the latest checkpoint and log.
        #[arg(long)]
        resume: bool,
    },
    /// Predict every hold-out hour.
    Predict,
    /// Rolling ARMA calibration of the predictions.
    Calibrate,
    /// Score predictions against truth and persistence baselines.
    Evaluate {
        #[arg(long, value_enum)]
        source: Option<Source>,
    },
    /// Render PPM images.
    #[command(subcommand)]
    Render(Render),
}

#[derive(Debug, Subcommand)]
enum Render {
    /// One normalized frame (default: the last hour).
    Frame {
        #[arg(long, conflicts_with = "time")]
        index: Option<usize>,
        /// RFC 3339 timestamp of the frame.
        #[arg(long)]
        time: Option<DateTime<Utc>>,
        #[arg(long, default_value = "rtlmp")]
        feature: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spatial correlation matrix written by `evaluate`.
    Correlation {
        #[arg(long, value_parser = ["pred", "truth"], default_value = "pred")]
        which: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let path = cli
        .config
        .or_else(|| Some(PathBuf::from(DEFAULT_CONFIG)).filter(|p| p.exists()));
    let cfg = RunConfig::load(path.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth { hours, out } => commands::synth(&cfg, hours, out),
        Command::Ingest => commands::ingest(&cfg),
        Command::Train { resume } => commands::train(&cfg, resume),
        Command::Predict => commands::predict(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Evaluate { source } => commands::evaluate(&cfg, source),
        Command::Render(Render::Frame {
            index,
            time,
            feature,
            out,
        }) => commands::render_frame(&cfg, index, time, &feature, out),
        Command::Render(Render::Correlation { which, out }) => commands::render_correlation(&cfg, &which, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
