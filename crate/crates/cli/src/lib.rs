//! The `g2t` command-line tool: preprocessing, training, translation,
//! evaluation, statistics and hyperparameter sweeps driven by one TOML file.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use g2t_core::decoding::DecodeError;
use g2t_core::numerics::NumericsError;
use g2t_core::training::TrainError;
use g2t_core::transformer::TransformerError;

pub use config::RunConfig;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "G2T_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// A malformed command line or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "g2t", version, about = "Gloss-to-text translation with Transformers")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.warmup_steps=8000`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Beam,
    Warmup,
    Lr,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strip prefixes (ASLG mode), apply the frequency threshold, write vocabularies and statistics.
    Preprocess,
    /// Train one model per configured seed and report the averaged scores.
    Train,
    /// Translate a gloss file with one checkpoint, or several as an ensemble.
    Translate {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print corpus statistics per split for glosses and text.
    Stats {
        /// Corpus directory; defaults to the prepared corpus.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Score a grid of beam widths, warmup steps or learning rates on dev and test.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated grid; defaults to the axis' standard grid.
        #[arg(long)]
        values: Option<String>,
        /// Checkpoints to decode with (beam axis only).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
}

fn cli_command() -> clap::Command {
    Cli::command().after_long_help(format!("Configuration keys and defaults:\n{}", RunConfig::key_listing()))
}

/// Maps an error to the process exit code: 1 usage, 3 numeric failure, 2 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericsError>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::Numerics(_) | TrainError::NonFiniteGradient { .. } => return EXIT_NUMERIC,
                TrainError::Config(_) => return EXIT_USAGE,
                _ => {}
            }
        }
        if let Some(TransformerError::Numerics(_)) = cause.downcast_ref::<TransformerError>() {
            return EXIT_NUMERIC;
        }
        if let Some(DecodeError::Model(TransformerError::Numerics(_))) = cause.downcast_ref::<DecodeError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let matches = match cli_command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = Cli::from_arg_matches(&matches)
        .map_err(anyhow::Error::from)
        .and_then(|cli| commands::execute(&cli));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
