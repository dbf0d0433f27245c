use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use instructmix::mixture::{materialize_shards, mixture_weights, parse_proportions, MixtureConfig, DEFAULT_EPS};
use serde::Serialize;

use super::{load_registry, Context};
use crate::args::MixtureArgs;
use crate::config::pick;
use crate::output::RunManifest;
use crate::{Failure, Outcome};

pub const DEFAULT_DRAWS: u64 = 100_000;
pub const DEFAULT_SHARD_SIZE: u64 = 10_000;
pub const STATS_FILE: &str = "mixture_stats.json";

pub fn stream_file(shard: usize) -> String {
    format!("stream-{shard:05}.jsonl")
}

#[derive(Debug, Serialize)]
struct MixtureSettings {
    seed: u64,
    draws: u64,
    shard_size: u64,
    config: MixtureConfig,
}

#[derive(Debug, Serialize)]
struct MixtureStats {
    draws: u64,
    shards: usize,
    configured: BTreeMap<String, f64>,
    empirical: BTreeMap<String, f64>,
    per_task: BTreeMap<String, f64>,
}

/// Base config from `--mixture` (file or shorthand) or the run config file,
/// plus the seed it carries, if any.
fn base_config(ctx: &Context, args: &MixtureArgs) -> Result<(MixtureConfig, Option<u64>), Failure> {
    let from_props = |p| MixtureConfig {
        eps: DEFAULT_EPS,
        benchmark_proportions: p,
        aux_proportions: Default::default(),
        seed: 0,
    };
    if let Some(spec) = &args.mixture {
        let path = Path::new(spec);
        if path.is_file() {
            let bad = |e: String| Failure::input(format!("{spec}: {e}"));
            let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
            let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let has_seed = raw.get("seed").is_some();
            let cfg: MixtureConfig = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
            let seed = has_seed.then_some(cfg.seed);
            return Ok((cfg, seed));
        }
        return Ok((from_props(parse_proportions(spec)?), None));
    }
    if let Some(map) = &ctx.file.benchmark_proportions {
        return Ok((from_props(map.clone()), None));
    }
    if let Some(s) = &ctx.file.proportions {
        return Ok((from_props(parse_proportions(s)?), None));
    }
    Err(Failure::input(
        "no benchmark proportions: pass --mixture or set them in --config",
    ))
}

pub fn cmd_mixture(ctx: &Context, args: &MixtureArgs) -> Result<Outcome, Failure> {
    let (mut cfg, file_seed) = base_config(ctx, args)?;
    let seed = ctx
        .common
        .seed
        .or(ctx.file.seed)
        .or(file_seed)
        .ok_or_else(|| Failure::input("`mixture` samples and needs --seed"))?;
    cfg.seed = seed;
    cfg.eps = pick(args.eps, ctx.file.eps, cfg.eps);
    let mut aux = ctx.file.aux_proportions.unwrap_or(cfg.aux_proportions);
    aux.pretrain = args.pretrain.unwrap_or(aux.pretrain);
    aux.reasoning = args.reasoning.unwrap_or(aux.reasoning);
    aux.dialogue = args.dialogue.unwrap_or(aux.dialogue);
    cfg.aux_proportions = aux;
    cfg.validate()?;
    let draws = pick(args.draws, ctx.file.draws, DEFAULT_DRAWS);
    let shard_size = pick(args.shard_size, ctx.file.shard_size, DEFAULT_SHARD_SIZE);
    if draws == 0 || shard_size == 0 {
        return Err(Failure::input("--draws and --shard-size must be positive"));
    }

    let mut out = ctx.out_dir("mixture")?;
    let (registry, reg_path) = load_registry(&args.registry)?;
    let weights = mixture_weights(&registry, &cfg)?;
    let shards = materialize_shards(&weights, &registry, seed, draws, shard_size)?;

    let mut counts: BTreeMap<String, u64> = weights.per_benchmark.keys().map(|b| (b.clone(), 0)).collect();
    for (i, shard) in shards.iter().enumerate() {
        let mut buf = Vec::new();
        for d in shard {
            *counts
                .get_mut(&weights.task_benchmark[&d.task_id])
                .expect("weighted benchmark") += 1;
            serde_json::to_writer(&mut buf, d).map_err(|e| Failure::internal(e.to_string()))?;
            buf.push(b'\n');
        }
        out.write(&stream_file(i), &buf)?;
    }
    let stats = MixtureStats {
        draws,
        shards: shards.len(),
        configured: weights.per_benchmark.clone(),
        empirical: counts.into_iter().map(|(b, c)| (b, c as f64 / draws as f64)).collect(),
        per_task: weights.per_task.clone(),
    };
    out.write_json(STATS_FILE, &stats)?;

    let mut message = format!("{draws} draws in {} shards\n", shards.len());
    let _ = writeln!(message, "{:<16} {:>10} {:>10}", "benchmark", "configured", "empirical");
    for (b, p) in &stats.configured {
        let _ = writeln!(message, "{b:<16} {p:>10.4} {:>10.4}", stats.empirical[b]);
    }
    let settings = MixtureSettings {
        seed,
        draws,
        shard_size,
        config: cfg,
    };
    let mut run = RunManifest::new("mixture", ctx.workers, &settings).input(&reg_path)?;
    if let Some(spec) = &args.mixture {
        run = run.input(Path::new(spec))?;
    }
    let dir = out.finish(run)?;
    Ok(Outcome {
        message,
        out_dir: Some(dir),
    })
}
