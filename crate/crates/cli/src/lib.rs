//! `gaitlab` command line: argument model, validation and dispatch.
//!
//! Exit codes: 0 success, 1 invalid invocation, 2 runtime failure. Every
//! subcommand that writes files also writes `run.json`, whose `argv` field
//! replays the run exactly.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gaitlab_core::data::Activity;
use gaitlab_core::dsp::{window_len_for_seconds, WINDOW_LENGTHS};
use gaitlab_core::eval::Method;
use gaitlab_core::ml::{ModelKind, ProjectionKind};
use serde::Serialize;

pub use commands::execute;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs detected before any computation.
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub(crate) fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub(crate) fn invalid(e: impl fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gaitlab", version, about = "Accelerometer gait analysis: synthesis, ingest, features, classification and reports")]
pub struct Cli {
    /// Increase log detail (-v info, -vv debug). Logs go to standard error.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "GAITLAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (manifest plus CSV recordings).
    Synth(SynthArgs),
    /// Run the streaming ingest server until interrupted.
    Serve(ServeArgs),
    /// Extract the eight clinical features for every recording.
    Extract(ExtractArgs),
    /// Group statistics with Welch t-tests, as text and JSON.
    Stats(StatsArgs),
    /// Train one model on every subject of one activity.
    Train(TrainArgs),
    /// Leave-one-subject-out evaluation.
    Eval(EvalArgs),
    /// Merge evaluation results and render the report tables.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Serve(_) => "serve",
            Command::Extract(_) => "extract",
            Command::Stats(_) => "stats",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Group parameters shaped after the published 6+6 cohort.
    PaperShape,
    /// Both groups drawn from the TD distribution.
    Null,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "paper-shape")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives manifest.json and recordings/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub per_group: usize,
    /// Activities to generate (default: all seven).
    #[arg(long = "activity", value_parser = parse_activity)]
    pub activity: Vec<Activity>,
    /// Duration of the six-minute walk in seconds.
    #[arg(long, default_value_t = 360.0)]
    pub six_minute_s: f64,
    /// Measurement noise as a fraction of signal RMS.
    #[arg(long, default_value_t = 0.05)]
    pub noise_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "GAITLAB_BIND", default_value = gaitlab_ingest::ServerConfig::DEFAULT_BIND)]
    pub bind: String,
    /// Directory receiving manifest.json and recordings/.
    #[arg(long, env = "GAITLAB_STORAGE_ROOT")]
    pub storage_root: PathBuf,
    #[arg(long, env = "GAITLAB_MAX_SESSIONS", default_value_t = gaitlab_ingest::ServerConfig::DEFAULT_MAX_SESSIONS)]
    pub max_sessions: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset directory (containing manifest.json) or manifest path.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "gaitlab-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Classifier for the CML methods.
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long, value_parser = parse_projection, default_value = "none")]
    pub projection: ProjectionKind,
    /// Window length in samples (10, 30, 50, 90, 100, 150) or seconds
    /// with an `s` suffix (0.3s, 1s, 1.6s, 3s, 3.3s, 5s).
    #[arg(long, value_parser = parse_tw)]
    pub tw: Option<usize>,
    #[arg(long, value_parser = parse_activity)]
    pub activity: Activity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub cnn_epochs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Classifiers for the CML methods; repeat or use `all`.
    #[arg(long, value_delimiter = ',', value_parser = parse_model_list)]
    pub model: Vec<ModelList>,
    /// Projections (none, pca, lda); repeat or use `all`.
    #[arg(long, value_delimiter = ',', value_parser = parse_projection_list, default_value = "none")]
    pub projection: Vec<ProjectionList>,
    /// Window lengths for the raw methods, in samples or seconds (`5s`);
    /// repeat or use `all`.
    #[arg(long, value_delimiter = ',', value_parser = parse_tw_list)]
    pub tw: Vec<TwList>,
    /// Activities to evaluate (default: all in the dataset).
    #[arg(long = "activity", value_parser = parse_activity)]
    pub activity: Vec<Activity>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub cnn_epochs: usize,
    /// Neighbours for kNN.
    #[arg(long, default_value_t = 3)]
    pub knn_k: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// `results.json` files written by `eval`.
    #[arg(long = "results", required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long, default_value = "gaitlab-out")]
    pub out: PathBuf,
}

/// One `--model` value: a single kind or `all`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModelList(pub Vec<ModelKind>);

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProjectionList(pub Vec<ProjectionKind>);

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TwList(pub Vec<usize>);

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|_| format!("unknown method {s:?} (expected cml-cf, cml-raw or dl-raw)"))
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = ModelKind::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown model {s:?} (expected one of {})", names.join(", "))
    })
}

fn parse_model_list(s: &str) -> Result<ModelList, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(ModelList(ModelKind::ALL.to_vec()))
    } else {
        parse_model(s).map(|m| ModelList(vec![m]))
    }
}

fn parse_projection(s: &str) -> Result<ProjectionKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(ProjectionKind::None),
        "pca" | "pca2" => Ok(ProjectionKind::Pca2),
        "lda" | "lda1" => Ok(ProjectionKind::Lda1),
        _ => Err(format!("unknown projection {s:?} (expected none, pca or lda)")),
    }
}

fn parse_projection_list(s: &str) -> Result<ProjectionList, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(ProjectionList(ProjectionKind::ALL.to_vec()))
    } else {
        parse_projection(s).map(|p| ProjectionList(vec![p]))
    }
}

/// Samples, or seconds with an `s` suffix mapped to the canonical counts.
pub fn parse_tw(s: &str) -> Result<usize, String> {
    let bad = || {
        format!("invalid window length {s:?}: use samples {WINDOW_LENGTHS:?} or seconds 0.3s, 1s, 1.6s, 3s, 3.3s, 5s")
    };
    if let Some(secs) = s.strip_suffix('s') {
        let secs: f64 = secs.parse().map_err(|_| bad())?;
        return window_len_for_seconds(secs).ok_or_else(bad);
    }
    let n: usize = s.parse().map_err(|_| bad())?;
    WINDOW_LENGTHS.contains(&n).then_some(n).ok_or_else(bad)
}

fn parse_tw_list(s: &str) -> Result<TwList, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(TwList(WINDOW_LENGTHS.to_vec()))
    } else {
        parse_tw(s).map(|n| TwList(vec![n]))
    }
}

fn parse_activity(s: &str) -> Result<Activity, String> {
    s.parse::<Activity>().map_err(|_| {
        let names: Vec<&str> = Activity::ALL.iter().map(|a| a.as_str()).collect();
        format!("unknown activity {s:?} (expected one of {})", names.join(", "))
    })
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Help and version requests print to standard output and return 0.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}
