mod eval;
mod mixture;
mod pack;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use instructmix::corpus::{assign_splits, registry_stats, GeneralizationLevel, Manifest, Registry, SplitPlan};
use instructmix::dedup::{dedup_report, write_report, DEFAULT_THRESHOLD};
use instructmix::eval::{aggregate, EvalReport, LeafScore};
use instructmix::tokenizer::tokenizer_from_spec;
use serde::Serialize;

pub use eval::cmd_eval;
pub use mixture::cmd_mixture;
pub use pack::cmd_pack;

use crate::args::{DedupArgs, IngestArgs, ReportArgs, SplitsArgs, StatsArgs};
use crate::config::{pick, FileConfig};
use crate::output::{OutDir, RunManifest};
use crate::{Common, Failure, Outcome};

pub const REGISTRY_FILE: &str = "registry.json";
pub const DEFAULT_TOKENIZER: &str = "byte";

/// Resolved global settings handed to every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub common: Common,
    pub file: FileConfig,
    pub workers: usize,
}

impl Context {
    fn seed(&self, command: &str) -> Result<u64, Failure> {
        self.common
            .seed
            .or(self.file.seed)
            .ok_or_else(|| Failure::input(format!("`{command}` samples and needs --seed")))
    }

    fn out_dir(&self, command: &str) -> Result<OutDir, Failure> {
        let root = self
            .common
            .out
            .as_deref()
            .ok_or_else(|| Failure::input(format!("`{command}` needs --out")))?;
        OutDir::prepare(root, self.common.force)
    }

    fn tokenizer_spec(&self, flag: &Option<String>) -> String {
        pick(flag.clone(), self.file.tokenizer.clone(), DEFAULT_TOKENIZER.to_string())
    }
}

/// Accepts either a registry file or a directory containing one.
pub fn registry_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(REGISTRY_FILE)
    } else {
        path.to_owned()
    }
}

fn load_registry(path: &Path) -> Result<(Registry, PathBuf), Failure> {
    let p = registry_path(path);
    Ok((Registry::load(&p)?, p))
}

#[derive(Serialize)]
struct IngestSettings<'a> {
    manifest: &'a Path,
    seed: u64,
}

pub fn cmd_ingest(ctx: &Context, args: &IngestArgs) -> Result<Outcome, Failure> {
    let seed = ctx.seed("ingest")?;
    let mut out = ctx.out_dir("ingest")?;
    let manifest = Manifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let registry = Registry::from_manifest(&manifest, base, seed)?;
    out.write(REGISTRY_FILE, registry.to_json().as_bytes())?;
    let settings = IngestSettings {
        manifest: &args.manifest,
        seed,
    };
    let manifest_run = RunManifest::new("ingest", ctx.workers, &settings).input(&args.manifest)?;
    let dir = out.finish(manifest_run)?;
    let examples: u64 = registry.tasks().map(|t| t.spec.num_examples).sum();
    Ok(Outcome {
        message: format!("registered {} tasks ({examples} examples)\n", registry.len()),
        out_dir: Some(dir),
    })
}

pub fn cmd_splits(ctx: &Context, args: &SplitsArgs) -> Result<Outcome, Failure> {
    let mut out = ctx.out_dir("splits")?;
    let (registry, reg_path) = load_registry(&args.registry)?;
    let plan = SplitPlan::load(&args.plan)?;
    let labelled = assign_splits(&registry, &plan)?;
    out.write(REGISTRY_FILE, labelled.to_json().as_bytes())?;
    let run = RunManifest::new("splits", ctx.workers, &plan)
        .input(&reg_path)?
        .input(&args.plan)?;
    let dir = out.finish(run)?;
    let mut message = String::new();
    for level in [
        GeneralizationLevel::FullyHeldOut,
        GeneralizationLevel::PartiallySupervised,
        GeneralizationLevel::FullySupervised,
    ] {
        let n = labelled
            .eval_tasks()
            .filter(|t| t.spec.generalization_level == Some(level))
            .count();
        let _ = writeln!(message, "{level:?}: {n} eval tasks");
    }
    let _ = writeln!(message, "train tasks: {}", labelled.train_tasks().count());
    Ok(Outcome {
        message,
        out_dir: Some(dir),
    })
}

#[derive(Serialize)]
struct DedupSummary<'a> {
    threshold: f64,
    pairs: usize,
    flagged: Vec<&'a instructmix::OverlapEntry>,
}

pub fn cmd_dedup(ctx: &Context, args: &DedupArgs) -> Result<Outcome, Failure> {
    let seed = ctx.seed("dedup")?;
    let threshold = pick(args.threshold, ctx.file.threshold, DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::input(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let mut out = ctx.out_dir("dedup")?;
    let (registry, reg_path) = load_registry(&args.registry)?;
    let entries = dedup_report(&registry, threshold, seed)?;
    let mut buf = Vec::new();
    write_report(&entries, &mut buf).map_err(|e| Failure::internal(e.to_string()))?;
    out.write("dedup.jsonl", &buf)?;
    let summary = DedupSummary {
        threshold,
        pairs: entries.len(),
        flagged: entries.iter().filter(|e| e.flagged).collect(),
    };
    out.write_json("dedup_summary.json", &summary)?;
    let mut message = format!("{} pairs, {} flagged\n", summary.pairs, summary.flagged.len());
    for e in &summary.flagged {
        let _ = writeln!(message, "  {} vs {}: {:.4}", e.eval_task, e.train_task, e.fraction);
    }
    let run = RunManifest::new(
        "dedup",
        ctx.workers,
        &serde_json::json!({ "seed": seed, "threshold": threshold }),
    )
    .input(&reg_path)?;
    let dir = out.finish(run)?;
    Ok(Outcome {
        message,
        out_dir: Some(dir),
    })
}

pub fn cmd_stats(ctx: &Context, args: &StatsArgs) -> Result<Outcome, Failure> {
    let seed = ctx.seed("stats")?;
    let tokenizer = tokenizer_from_spec(&ctx.tokenizer_spec(&args.tokenizer))?;
    let (registry, reg_path) = load_registry(&args.registry)?;
    let stats = registry_stats(&registry, tokenizer.as_ref(), seed)?;

    let mut message = String::new();
    for (title, rows) in [("benchmark", &stats.benchmarks), ("category", &stats.categories)] {
        let _ = writeln!(
            message,
            "{title:<24} {:>6} {:>10} {:>8} {:>10} {:>10}",
            "tasks", "examples", "prompts", "len_mean", "len_std"
        );
        for r in rows {
            let _ = writeln!(
                message,
                "{:<24} {:>6} {:>10} {:>8.2} {:>10.1} {:>10.1}",
                r.key, r.tasks, r.examples, r.avg_prompts_per_task, r.prompt_len_mean, r.prompt_len_std
            );
        }
        message.push('\n');
    }
    let _ = writeln!(
        message,
        "total: {} tasks, {} examples",
        stats.total_tasks, stats.total_examples
    );

    let out_dir = match ctx.common.out {
        Some(_) => {
            let mut out = ctx.out_dir("stats")?;
            out.write_json("stats.json", &stats)?;
            let run = RunManifest::new(
                "stats",
                ctx.workers,
                &serde_json::json!({ "seed": seed, "tokenizer": tokenizer.name() }),
            )
            .input(&reg_path)?;
            Some(out.finish(run)?)
        }
        None => None,
    };
    Ok(Outcome { message, out_dir })
}

/// Loads a report from `report.json`, a leaves file, or an eval output directory.
pub fn load_report(path: &Path) -> Result<EvalReport, Failure> {
    let path = if path.is_dir() {
        path.join(eval::REPORT_FILE)
    } else {
        path.to_owned()
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let leaves = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<LeafScore>(l)
                    .map_err(|e| Failure::input(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(aggregate(&leaves)?)
    } else {
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }
}

pub fn cmd_report(_ctx: &Context, args: &ReportArgs) -> Result<Outcome, Failure> {
    let report = load_report(&args.input)?;
    Ok(Outcome {
        message: report.render_text(),
        out_dir: None,
    })
}
