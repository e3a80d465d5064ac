//! Experiment driver for the uavpred library.
//!
//! Subcommands: generate, segment, fit-norm, train, evaluate, stream-sim,
//! report. Each reads an optional TOML config (`--config`), applies
//! `--seed`, `--out`, and `--set section.key=value` overrides, writes its
//! artifacts under the output directory, and snapshots the effective
//! config plus a timestamp into `meta/` (the only place timestamps live,
//! so artifact bytes stay reproducible).
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 numerical failure.

mod commands;
mod config;

use clap::Parser;
use std::path::PathBuf;

use uavpred::dataset::DataError;
use uavpred::metrics::MetricsError;
use uavpred::model::ModelError;
use uavpred::normalize::NormError;
use uavpred::numerics::NumericsError;
use uavpred::stream::StreamError;
use uavpred::train::TrainError;
use uavpred::trajgen::TrajError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::NotPositiveDefinite { .. }
            | NumericsError::SingularFactor { .. }
            | NumericsError::NonFinite(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<TrajError> for CliError {
    fn from(e: TrajError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<NormError> for CliError {
    fn from(e: NormError) -> Self {
        match e {
            NormError::DegenerateCovariance => CliError::numeric(e.to_string()),
            NormError::Numerics(inner) => inner.into(),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::StaleTape(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } => CliError::numeric(e.to_string()),
            TrainError::Model(inner) => inner.into(),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Model(inner) => inner.into(),
            StreamError::Norm(inner) => inner.into(),
            StreamError::Traj(inner) => inner.into(),
            _ => CliError::data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "uavpred",
    about = "UAV 3D trajectory forecasting experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct CommonArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed override.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Per-field override, repeatable: --set train.batch_size=64
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Generate random circle/infinity trajectory CSVs plus a manifest.
    Generate(CommonArgs),
    /// Resample, derive channels, window, split, and store segment sets.
    Segment(CommonArgs),
    /// Fit normalization statistics over the trajectory corpus.
    FitNorm(CommonArgs),
    /// Train a model on the stored segments; writes checkpoint + history.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the test segments; writes a report CSV.
    Evaluate(CommonArgs),
    /// Replay a simulated jittered stream through a checkpoint.
    StreamSim(CommonArgs),
    /// Merge evaluation reports into combined tables.
    Report(CommonArgs),
}

fn run(command: &Command) -> Result<(), CliError> {
    let (name, args): (&str, &CommonArgs) = match command {
        Command::Generate(a) => ("generate", a),
        Command::Segment(a) => ("segment", a),
        Command::FitNorm(a) => ("fit-norm", a),
        Command::Train(a) => ("train", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::StreamSim(a) => ("stream-sim", a),
        Command::Report(a) => ("report", a),
    };
    let config = config::load_config(
        args.config.as_deref(),
        args.seed,
        args.out.as_deref(),
        &args.set,
    )?;
    commands::write_run_metadata(&config, name)?;
    match command {
        Command::Generate(_) => commands::cmd_generate(&config),
        Command::Segment(_) => commands::cmd_segment(&config),
        Command::FitNorm(_) => commands::cmd_fit_norm(&config),
        Command::Train(_) => commands::cmd_train(&config),
        Command::Evaluate(_) => commands::cmd_evaluate(&config),
        Command::StreamSim(_) => commands::cmd_stream_sim(&config),
        Command::Report(_) => commands::cmd_report(&config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_map_by_failure_class() {
        let numeric: CliError = NumericsError::NotPositiveDefinite { col: 1, pivot: -0.5 }.into();
        assert_eq!(numeric.code, EXIT_NUMERIC);
        let numeric: CliError = NormError::DegenerateCovariance.into();
        assert_eq!(numeric.code, EXIT_NUMERIC);
        let numeric: CliError = TrainError::NonFiniteGradient { epoch: 3 }.into();
        assert_eq!(numeric.code, EXIT_NUMERIC);

        let data: CliError = DataError::NonMonotonicTimestamps(4).into();
        assert_eq!(data.code, EXIT_DATA);
        let data: CliError = StreamError::StatsMismatch.into();
        assert_eq!(data.code, EXIT_DATA);
        let data: CliError = ModelError::CorruptCheckpoint("x".to_string()).into();
        assert_eq!(data.code, EXIT_DATA);

        assert_eq!(CliError::usage("bad flag").code, EXIT_USAGE);
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(EXIT_USAGE);
        }
    };
    if let Err(e) = run(&cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
