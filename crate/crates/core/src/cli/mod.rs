//! Command-line front end. Every subcommand reads one [`RunConfig`] (JSON
//! file plus `--set` overrides), writes plot-ready CSV/JSON into `--out`, and
//! echoes the resolved configuration in `run_meta.json`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

use crate::cluster::ClusterError;
use crate::dataset::DatasetError;
use crate::grouping::GroupingError;
use crate::logreg::FitError;
use crate::mvpa::MvpaError;
use crate::pipeline::PipelineError;
use crate::prep::PrepError;
use crate::stats::StatsError;
use crate::subject_clf::ClfError;
use crate::synth::SynthError;

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config { field, message } => CliError::Config(format!("synth.{field}: {message}")),
            SynthError::Dataset(e) => e.into(),
        }
    }
}

impl From<GroupingError> for CliError {
    fn from(e: GroupingError) -> Self {
        match e {
            GroupingError::InvalidSpec(_) => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<PrepError> for CliError {
    fn from(e: PrepError) -> Self {
        CliError::Config(format!("prep: {e}"))
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Config(_) => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Config(_) | ClusterError::TooFewPermutations { .. } => CliError::Config(format!("cluster: {e}")),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<MvpaError> for CliError {
    fn from(e: MvpaError) -> Self {
        match e {
            MvpaError::Fit(e) => e.into(),
            MvpaError::Grouping(e) => e.into(),
            MvpaError::NoSeeds => CliError::Config("n_seeds must be at least 1".into()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Grouping(e) => e.into(),
            PipelineError::Prep(e) => e.into(),
            PipelineError::Mvpa(e) => e.into(),
            PipelineError::Cluster(e) => e.into(),
            PipelineError::Split(m) => CliError::Config(format!("split: {m}")),
        }
    }
}

impl From<ClfError> for CliError {
    fn from(e: ClfError) -> Self {
        match e {
            ClfError::Config(_) | ClfError::SingleClassFold { .. } | ClfError::EmptyFraction { .. } => {
                CliError::Config(e.to_string())
            }
            ClfError::Pipeline(e) => e.into(),
            ClfError::Grouping(e) => e.into(),
            ClfError::Prep(e) => e.into(),
            ClfError::Fit(e) => e.into(),
            ClfError::Mvpa(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into --out.
    Synth,
    /// Time-resolved decoding, cluster test and channel importance.
    Decode,
    /// Bootstrapped subject-level classification over the condition grid.
    Classify,
    /// Train on two groups and score a held-out group.
    Transfer,
    /// Input, data-budget or bootstrap-parameter ablations.
    Ablate,
    /// Response-profile logistic regression baseline.
    Behavioral,
    /// Correlate subject probabilities with questionnaire scores.
    Correlate,
    /// Check a dataset and list every violation.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Decode => "decode",
            Command::Classify => "classify",
            Command::Transfer => "transfer",
            Command::Ablate => "ablate",
            Command::Behavioral => "behavioral",
            Command::Correlate => "correlate",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eegdecode", version, about = "EEG group decoding and subject-level classification")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults apply to every omitted field.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed; every random stream derives from it.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, value_name = "INT")]
    pub threads: Option<usize>,
    /// Output directory (the dataset directory for `synth`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset directory; same as `--set dataset_path=PATH`.
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Synthetic preset for the `synth` section.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Override a config field by dotted path, e.g. `bootstrap.n_boot=100`.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub sets: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Resolves the configuration and runs one subcommand.
pub fn run(args: &Args) -> Result<(), CliError> {
    let mut cfg = config::load(args.config.as_deref(), args.preset.as_deref(), &args.sets)?;
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(d) = &args.data {
        cfg.dataset_path = Some(d.clone());
    }
    let threads = match args.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| commands::dispatch(args.command, cfg))
}

/// Parses `argv`, runs, reports errors on stderr and returns the exit code.
pub fn main_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match panic::catch_unwind(AssertUnwindSafe(|| run(&args))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("eegdecode {}: {e}", args.command.name());
            e.exit_code()
        }
        Err(_) => {
            eprintln!("eegdecode {}: internal error (panic)", args.command.name());
            4
        }
    }
}
