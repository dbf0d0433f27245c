use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "instructmix",
    version,
    about = "Deterministic instruction-tuning data pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Seed for every sampling step. Required by sampling commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: available parallelism). Never changes outputs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// JSON run configuration; explicit flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a manifest, cap every task and write the registry.
    Ingest(IngestArgs),
    /// Label tasks with generalization levels according to a split plan.
    Splits(SplitsArgs),
    /// Report 13-gram overlap between eval and train tasks.
    Dedup(DedupArgs),
    /// Compute mixture weights and materialize sampled stream shards.
    Mixture(MixtureArgs),
    /// Render, tokenize and pack stream shards into binary shards.
    Pack(PackArgs),
    /// Score eval tasks and aggregate the results.
    Eval(EvalArgs),
    /// Print an evaluation report.
    Report(ReportArgs),
    /// Print per-benchmark and per-category registry statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Manifest file; record paths inside it are relative to its directory.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SplitsArgs {
    /// Registry file, or a directory holding `registry.json`.
    #[arg(long)]
    pub registry: PathBuf,

    /// Split plan JSON: held-out categories, partially held tasks, supervised eval tasks.
    #[arg(long)]
    pub plan: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DedupArgs {
    /// Registry file, or a directory holding `registry.json`.
    #[arg(long)]
    pub registry: PathBuf,

    /// Overlap fraction above which a pair is flagged (default 0.01).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct MixtureArgs {
    /// Registry file, or a directory holding `registry.json`.
    #[arg(long)]
    pub registry: PathBuf,

    /// Mixture config file, or a proportion shorthand such as `4/2/20/25/45/2/2`
    /// (crossfit/exmix/flan/niv2/promptsource/t5/uskg).
    #[arg(long)]
    pub mixture: Option<String>,

    /// Per-task size cap used for example-proportional weights (default 4096).
    #[arg(long)]
    pub eps: Option<u64>,

    /// Share of pretraining data; scales every other share by 1 - p.
    #[arg(long)]
    pub pretrain: Option<f64>,

    /// Share of reasoning data, taken from the largest benchmark.
    #[arg(long)]
    pub reasoning: Option<f64>,

    /// Share of dialogue data; scales every other share by 1 - p.
    #[arg(long)]
    pub dialogue: Option<f64>,

    /// Total number of draws to materialize.
    #[arg(long)]
    pub draws: Option<u64>,

    /// Draws per stream shard.
    #[arg(long)]
    pub shard_size: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PackArgs {
    /// Registry file, or a directory holding `registry.json`.
    #[arg(long)]
    pub registry: PathBuf,

    /// Directory holding `stream-*.jsonl` shards.
    #[arg(long)]
    pub stream: PathBuf,

    /// Tokenizer name (default `byte`).
    #[arg(long)]
    pub tokenizer: Option<String>,

    /// Packed sequence length (default 2048).
    #[arg(long)]
    pub seq_len: Option<usize>,

    /// Prepend sampled in-context demonstrations to each example.
    #[arg(long)]
    pub metaicl: bool,

    /// Exponent of the demonstration-count distribution (default 4).
    #[arg(long)]
    pub zipf_a: Option<f64>,

    /// Maximum number of demonstrations (default 5).
    #[arg(long)]
    pub cap_k: Option<usize>,

    /// Put loss on the first demonstration's label and everything after it.
    #[arg(long)]
    pub suffix_loss: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Registry file, or a directory holding `registry.json`.
    #[arg(long)]
    pub registry: PathBuf,

    /// `uniform`, `unigram:<probs.json>` or `echo`.
    #[arg(long)]
    pub scorer: Option<String>,

    /// Comma-separated shot counts (default `0,5`).
    #[arg(long)]
    pub shots: Option<String>,

    /// Prompts sampled per task (default 250).
    #[arg(long, conflicts_with = "all_prompts")]
    pub max_prompts: Option<usize>,

    /// Score every prompt instead of a sample.
    #[arg(long)]
    pub all_prompts: bool,

    /// Generation budget for generative metrics (default 256).
    #[arg(long)]
    pub max_gen_tokens: Option<usize>,

    /// Tokenizer name (default `byte`).
    #[arg(long)]
    pub tokenizer: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// `report.json`, `leaves.jsonl`, or an eval output directory.
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// Registry file, or a directory holding `registry.json`.
    #[arg(long)]
    pub registry: PathBuf,

    /// Tokenizer name (default `byte`).
    #[arg(long)]
    pub tokenizer: Option<String>,
}
