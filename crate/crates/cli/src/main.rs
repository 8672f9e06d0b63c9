//! Batch front end for the bridge digital twin.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 success with a
//! Critical fatigue alert.

mod commands;
mod config;
mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bridge_twin::ingestion::LogFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub const THREADS_ENV: &str = "BRIDGE_TWIN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pipeline(#[from] bridge_twin::pipeline::PipelineError),
    #[error(transparent)]
    MonteCarlo(#[from] bridge_twin::montecarlo::McError),
    #[error(transparent)]
    Ml(#[from] bridge_twin::ml::MlError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for LogFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => LogFormat::Csv,
            FormatArg::Jsonl => LogFormat::Jsonl,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "bridge-twin",
    version,
    about = "Bridge digital twin: traffic, fatigue and reliability from detection logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline on a recorded detection log
    Replay {
        #[command(flatten)]
        common: Common,
        /// Detection log (overrides inputs.detections)
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Weather log (overrides inputs.weather)
        #[arg(long)]
        weather: Option<PathBuf>,
        /// Detection log format; inferred from the extension when omitted
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Generate synthetic traffic and run the pipeline on it
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds
        #[arg(long)]
        duration: Option<f64>,
        /// Format of the written detection log
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Weather log (overrides inputs.weather)
        #[arg(long)]
        weather: Option<PathBuf>,
    },
    /// Monte Carlo ensemble of fatigue scores
    Mc {
        #[command(flatten)]
        common: Common,
        /// Master seed (overrides mc.master_seed)
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds per replicate (overrides mc.duration)
        #[arg(long)]
        duration: Option<f64>,
        /// Replicate count (overrides mc.n_replicates)
        #[arg(long)]
        replicates: Option<usize>,
        /// Also run one-at-a-time sensitivity sweeps
        #[arg(long)]
        sensitivity: bool,
    },
    /// Fit a random forest on feature window CSVs
    Train {
        #[command(flatten)]
        common: Common,
        /// Feature CSVs (override inputs.features)
        #[arg(long = "features", num_args = 1..)]
        features: Vec<PathBuf>,
        /// Forest seed (overrides forest.seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict fatigue-score increments for feature windows
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model JSON (overrides inputs.model)
        #[arg(long)]
        model: Option<PathBuf>,
        /// Feature CSV (overrides inputs.features)
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Consolidate a run directory into a CSV bundle and text summary
    Report {
        /// Run directory containing manifest.json
        dir: PathBuf,
        /// Where to write the bundle (defaults to the run directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Replay {
            common,
            detections,
            weather,
            format,
        } => commands::replay(&common, detections, weather, format.map(Into::into)),
        Command::Simulate {
            common,
            seed,
            duration,
            format,
            weather,
        } => commands::simulate(&common, seed, duration, format.into(), weather),
        Command::Mc {
            common,
            seed,
            duration,
            replicates,
            sensitivity,
        } => commands::monte_carlo(&common, seed, duration, replicates, sensitivity),
        Command::Train { common, features, seed } => commands::train(&common, features, seed),
        Command::Predict {
            common,
            model,
            features,
        } => commands::predict(&common, model, features),
        Command::Report { dir, out } => report::report(&dir, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Critical) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
