//! Command-line front end: dataset generation, pretraining, adaptation,
//! evaluation, repeated-run experiments and PR-curve plots.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use predalign::trainloop::Mode;

pub use config::{DataConfig, ExperimentConfigFile, OutputConfig, Overrides, RESOLVED_CONFIG_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration; reported like a usage error.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] predalign::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "predalign", version, about = "Adversarial domain adaptation for a small vehicle detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Training seed, replacing `train.seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory, replacing `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the source, target, target-label and test datasets to <out>/data.
    GenData,
    /// Train the detector on labeled source scenes.
    Pretrain {
        /// Where to write the checkpoint [default: <out>/pretrained.paln].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Fine-tune a pretrained detector under one training mode.
    Adapt {
        /// Pretrained checkpoint; pretrains from scratch when omitted.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Training mode, replacing `train.mode`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Score a checkpoint on the target test set.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Run every configured mode over all repetitions and write metrics.csv.
    Experiment,
    /// Write the PR curve of a checkpoint as CSV and SVG.
    Plot {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).map_err(|e| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
