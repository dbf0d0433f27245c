//! Library side of the `instructmix` command-line tool.
//!
//! Every subcommand is a function from parsed arguments to files in an
//! output directory; [`run`] dispatches and maps failures to exit codes.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::PathBuf;

pub use args::{Cli, Command, Common};
pub use commands::{cmd_dedup, cmd_eval, cmd_ingest, cmd_mixture, cmd_pack, cmd_report, cmd_splits, cmd_stats};

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    /// Bad input files, flags or configuration. Exit code 2.
    Input(String),
    /// A bug or an environment problem. Exit code 1.
    Internal(String),
    /// The output directory is not empty and `--force` was not given. Exit code 3.
    Overwrite(PathBuf),
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Self {
        Failure::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Failure::Internal(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Input(_) => 2,
            Failure::Overwrite(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "error: {m}"),
            Failure::Internal(m) => write!(f, "internal error: {m}"),
            Failure::Overwrite(p) => write!(f, "refusing to overwrite non-empty {} (pass --force)", p.display()),
        }
    }
}

impl std::error::Error for Failure {}

impl From<instructmix::Error> for Failure {
    fn from(e: instructmix::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Text for standard output.
    pub message: String,
    /// Output directory, when the command wrote one.
    pub out_dir: Option<PathBuf>,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<Outcome, Failure> {
    let file = config::FileConfig::load(cli.common.config.as_deref())?;
    let workers = config::pick(cli.common.workers, file.workers, default_workers());
    if workers == 0 {
        return Err(Failure::input("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::internal(format!("thread pool: {e}")))?;
    let ctx = commands::Context {
        common: cli.common,
        file,
        workers,
    };
    pool.install(|| match &cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Splits(a) => cmd_splits(&ctx, a),
        Command::Dedup(a) => cmd_dedup(&ctx, a),
        Command::Mixture(a) => cmd_mixture(&ctx, a),
        Command::Pack(a) => cmd_pack(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
    })
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
