//! Command-line front end: scene bundles, masks, refinement, evaluation and
//! the component ablation, each a pure function of its config and seed.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod bundle;
pub mod commands;
pub mod config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] dyndepth::Error),

    #[error("refinement diverged after {iterations} iterations; partial report in {}", out.display())]
    Diverged { iterations: usize, out: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                dyndepth::Error::Io { .. } | dyndepth::Error::Format { .. } => EXIT_IO,
                dyndepth::Error::Shape(_) | dyndepth::Error::InvalidInput(_) => EXIT_USAGE,
            },
            CliError::Diverged { .. } => EXIT_DIVERGED,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dyndepth", version, about = "Depth refinement tools for scenes with moving objects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a seeded three-frame scene bundle with ground truth.
    Synth(SynthArgs),
    /// Dynamic and cost-volume masks for a bundle at a given depth.
    Masks(MasksArgs),
    /// Refine a depth map by direct photometric optimization.
    Refine(RefineArgs),
    /// Depth metrics of a prediction against ground truth.
    Eval(EvalArgs),
    /// Every DM / CVAM / SEU combination over a set of seeded scenes.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "F")]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "F")]
    pub beta: Option<f64>,
    #[arg(long, value_name = "F")]
    pub gamma: Option<f64>,
    #[arg(long, value_name = "F")]
    pub cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted depth (PFM).
    pub pred: PathBuf,
    /// Ground-truth depth (PFM).
    pub gt: PathBuf,
    /// Optional validity mask (PGM, nonzero = evaluate).
    #[arg(long, value_name = "PATH")]
    pub valid: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    pub cap: Option<f64>,
    #[arg(long)]
    pub median_scale: bool,
    /// Also write metrics.json and metrics.csv here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// First scene seed when the config gives no explicit list.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "F")]
    pub beta: Option<f64>,
    #[arg(long, value_name = "F")]
    pub gamma: Option<f64>,
    #[arg(long, value_name = "F")]
    pub cap: Option<f64>,
    /// Scenes processed concurrently.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Masks(a) => commands::masks(&a),
        Command::Refine(a) => commands::refine(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
