//! Command-line driver for the `umsnet` library.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 usage, 3 config or
//! geometry mismatch, 4 data or checkpoint integrity.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use umsnet::model::Variant;

pub mod commands;
pub mod config;

pub use config::{ModelOverrides, RunConfig, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] umsnet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use umsnet::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::UnknownUser { .. }) => 2,
            CliError::Core(E::Config(_) | E::Dimension(_)) => 3,
            CliError::Core(E::Integrity(_) | E::UnsupportedVersion { .. } | E::Schema(_)) => 4,
            CliError::Core(_) => 1,
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "umsnet",
    version,
    about = "Multi-sensor activity recognition: data, training, evaluation and cost analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset container.
    Generate(GenerateArgs),
    /// Convert HHAR, MHEALTH or described CSV files into a dataset container.
    Ingest(IngestArgs),
    /// Train on all users but one and evaluate on the held-out user.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a held-out user and print the metrics report.
    Eval(EvalArgs),
    /// Report parameter and multiply-accumulate counts of an untrained model.
    Analyze(AnalyzeArgs),
    /// Leave-one-user-out cross-validation over every user.
    Loocv(LoocvArgs),
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

/// Window lengths must be a positive whole number of 0.25 s slices.
fn parse_window(s: &str) -> Result<f64, String> {
    let w: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    let k = w / umsnet::data::WindowConfig::default().slice_seconds;
    if !(w > 0.0) || (k - k.round()).abs() > 1e-9 {
        return Err(format!("window {s} s is not a positive multiple of 0.25 s"));
    }
    Ok(w)
}

/// `name:channels` pairs separated by commas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorList(pub Vec<(String, usize)>);

pub fn parse_sensors(s: &str) -> Result<SensorList, String> {
    s.split(',')
        .map(|part| {
            let (name, ch) = part
                .split_once(':')
                .ok_or_else(|| format!("sensor {part:?} is not name:channels"))?;
            let ch: usize = ch.parse().map_err(|_| format!("bad channel count in {part:?}"))?;
            if name.is_empty() || ch == 0 {
                return Err(format!("sensor {part:?} needs a name and at least one channel"));
            }
            Ok((name.to_string(), ch))
        })
        .collect::<Result<_, _>>()
        .map(SensorList)
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub users: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value = "acc:3,gyro:3", value_parser = parse_sensors)]
    pub sensors: SensorList,
    /// Length of each user's segment per class.
    #[arg(long, default_value_t = 60.0)]
    pub seconds: f64,
    #[arg(long, env = "UMSNET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = umsnet::data::OFFSET_RANGE)]
    pub offset_range: f64,
    #[arg(long, default_value_t = 32.0)]
    pub rate: f64,
    /// Classes differ only in slow level switching.
    #[arg(long)]
    pub long_horizon: bool,
    #[arg(long, default_value = "1.5", value_parser = parse_window)]
    pub window: f64,
    #[arg(long)]
    pub stride: Option<f64>,
    /// Store the recordings unsliced so `train --window` can pick the window.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IngestFormat {
    Hhar,
    Mhealth,
    Generic,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: IngestFormat,
    /// HHAR accelerometer file.
    #[arg(long, required_if_eq("format", "hhar"))]
    pub accel: Option<PathBuf>,
    /// HHAR gyroscope file.
    #[arg(long, required_if_eq("format", "hhar"))]
    pub gyro: Option<PathBuf>,
    /// JSON column description for the generic format.
    #[arg(long, required_if_eq("format", "generic"))]
    pub schema: Option<PathBuf>,
    /// MHEALTH subject logs or generic CSV files.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32.0)]
    pub rate: f64,
    #[arg(long, default_value = "1.5", value_parser = parse_window)]
    pub window: f64,
    #[arg(long)]
    pub stride: Option<f64>,
    #[arg(long)]
    pub raw: bool,
}

/// Flags shared by `train` and `loocv`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long, value_parser = parse_window)]
    pub window: Option<f64>,
    #[arg(long, env = "UMSNET_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub holdout_user: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the user held out during training.
    #[arg(long)]
    pub holdout_user: Option<String>,
    /// Timed single-window passes; 0 leaves timing out of the report.
    #[arg(long, default_value_t = 0)]
    pub time_repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Hhar,
    Mhealth,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_parser = parse_variant, default_value = "A")]
    pub variant: Variant,
    #[arg(long, value_enum, ignore_case = true, default_value = "hhar")]
    pub profile: Profile,
    #[arg(long, default_value = "1.5", value_parser = parse_window)]
    pub window: f64,
    #[arg(long, default_value_t = 32.0)]
    pub rate: f64,
    /// Sensor layout of the custom profile.
    #[arg(long, value_parser = parse_sensors, required_if_eq("profile", "custom"))]
    pub sensors: Option<SensorList>,
    /// Class count of the custom profile.
    #[arg(long, required_if_eq("profile", "custom"))]
    pub classes: Option<usize>,
    /// Model overrides from a run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Build the kernel-3 convolutions dense instead of depthwise.
    #[arg(long)]
    pub dense: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    /// Also write `cost.csv` and `cost.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LoocvArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Folds run concurrently in child processes; 1 runs them in-process.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parses `args` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
