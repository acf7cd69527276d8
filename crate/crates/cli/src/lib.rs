//! `momentguide` command-line front end.
//!
//! Verbs: `sample`, `guide`, `eval`, `check`, `train`. Exit status is 0 on
//! success, 1 on a runtime failure and 2 on a configuration or validation
//! error.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod config;
pub mod inputs;
pub mod output;
pub mod runner;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<momentguide::Error> for CliError {
    fn from(e: momentguide::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "momentguide", version, about = "Moment-guided diffusion sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; overrides `run.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `run.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unguided batch generation.
    Sample(RunArgs),
    /// Feature-guided batch generation toward `guidance.reference`.
    Guide(RunArgs),
    /// FEAT-I / I-FEAT of a directory of PGM samples.
    Eval(EvalArgs),
    /// Run the self-check suites.
    Check(CheckArgs),
    /// Train the tiny denoiser on `train.dataset`.
    Train(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of PGM samples.
    #[arg(long)]
    pub samples: PathBuf,
    /// Reference image for FEAT-I.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Take the extractor section from this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// moments | central-moments | deep-moments
    #[arg(long)]
    pub extractor: Option<String>,
    #[arg(long)]
    pub max_order: Option<u32>,
    /// Pixel-net checkpoint for deep-moments.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Also write report.txt, samples.csv and a MANIFEST here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Only run this suite.
    #[arg(long)]
    pub scope: Option<String>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Sample(a) => runner::cmd_sample(&a),
        Command::Guide(a) => runner::cmd_guide(&a),
        Command::Eval(a) => runner::cmd_eval(&a),
        Command::Check(a) => runner::cmd_check(&a),
        Command::Train(a) => runner::cmd_train(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
