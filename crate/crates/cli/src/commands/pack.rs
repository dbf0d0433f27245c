use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use instructmix::corpus::{RawRecord, Registry, Split, Task, TaskKey};
use instructmix::mixture::Draw;
use instructmix::packing::{
    left_truncate, tokenize_rendered, write_shard, PackedSequence, Packer, ShardHeader, Truncated, DEFAULT_SEQ_LEN,
};
use instructmix::prompting::{
    build_metaicl_with, render_zero_shot_format, DelimiterSet, DemoCountSampler, LossVariant, MetaIclConfig,
};
use instructmix::seed::derive_rng;
use instructmix::Tokenizer;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{load_registry, Context};
use crate::args::PackArgs;
use crate::config::pick;
use crate::output::RunManifest;
use crate::{Failure, Outcome};

pub const STATS_FILE: &str = "pack_stats.json";

pub fn packed_file(shard: u64) -> String {
    format!("packed-{shard:05}.bin")
}

#[derive(Debug, Serialize)]
struct PackSettings {
    seed: u64,
    tokenizer: String,
    seq_len: usize,
    metaicl: Option<MetaIclConfig>,
}

#[derive(Debug, Clone, Default, Serialize)]
struct ShardStats {
    #[serde(skip_serializing_if = "Option::is_none")]
    shard: Option<u64>,
    examples: u64,
    /// Examples whose loss tokens were all removed by left truncation.
    dropped: u64,
    truncated: u64,
    sequences: u64,
    tokens: u64,
    loss_tokens: u64,
    pad_tokens: u64,
}

impl ShardStats {
    fn add(&mut self, o: &ShardStats) {
        self.examples += o.examples;
        self.dropped += o.dropped;
        self.truncated += o.truncated;
        self.sequences += o.sequences;
        self.tokens += o.tokens;
        self.loss_tokens += o.loss_tokens;
        self.pad_tokens += o.pad_tokens;
    }

    fn count(&mut self, seq: &PackedSequence) {
        self.sequences += 1;
        self.pad_tokens += seq.pad_count as u64;
        self.tokens += (seq.len() - seq.pad_count) as u64;
        self.loss_tokens += seq.loss_mask.iter().filter(|m| **m).count() as u64;
    }
}

#[derive(Debug, Serialize)]
struct PackStats {
    total: ShardStats,
    shards: Vec<ShardStats>,
}

/// `stream-NNNNN.jsonl` files of `dir`, ordered by shard number.
fn stream_shards(dir: &Path) -> Result<Vec<(u64, PathBuf)>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::input(e.to_string()))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(num) = name.strip_prefix("stream-").and_then(|n| n.strip_suffix(".jsonl")) {
            if let Ok(n) = num.parse::<u64>() {
                out.push((n, path));
            }
        }
    }
    if out.is_empty() {
        return Err(Failure::input(format!("no stream-*.jsonl shards in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

fn read_draws(path: &Path) -> Result<Vec<Draw>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Failure::input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

struct TaskIndex<'a> {
    task: &'a Task,
    records: HashMap<&'a str, usize>,
}

struct Packing<'a> {
    tasks: HashMap<&'a str, TaskIndex<'a>>,
    tokenizer: &'a dyn Tokenizer,
    delimiters: DelimiterSet,
    seq_len: usize,
    seed: u64,
    metaicl: Option<MetaIclConfig>,
}

impl<'a> Packing<'a> {
    fn new(
        registry: &'a Registry,
        tokenizer: &'a dyn Tokenizer,
        seq_len: usize,
        seed: u64,
        metaicl: Option<MetaIclConfig>,
    ) -> Self {
        let tasks = registry
            .train_tasks()
            .map(|t| {
                let records = t
                    .records
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (r.record_id.as_str(), i))
                    .collect();
                (t.spec.task_id.as_str(), TaskIndex { task: t, records })
            })
            .collect();
        Packing {
            tasks,
            tokenizer,
            delimiters: DelimiterSet::default(),
            seq_len,
            seed,
            metaicl,
        }
    }

    fn lookup(&self, draw: &Draw) -> Result<(&'a Task, usize), Failure> {
        let idx = self.tasks.get(draw.task_id.as_str()).ok_or_else(|| {
            let key = TaskKey {
                task_id: draw.task_id.clone(),
                split: Split::Train,
            };
            Failure::input(format!("stream references unknown train task `{key}`"))
        })?;
        let ri = *idx.records.get(draw.record_id.as_str()).ok_or_else(|| {
            Failure::input(format!(
                "stream references unknown record `{}` of `{}`",
                draw.record_id, draw.task_id
            ))
        })?;
        Ok((idx.task, ri))
    }

    fn shard(&self, shard: u64, draws: &[Draw]) -> Result<(Vec<PackedSequence>, ShardStats), Failure> {
        let mut stats = ShardStats {
            shard: Some(shard),
            ..Default::default()
        };
        let mut packer = Packer::new(self.seq_len, self.tokenizer.eos_id())?;
        let mut seqs = Vec::new();
        let mut samplers: BTreeMap<usize, (MetaIclConfig, DemoCountSampler)> = BTreeMap::new();
        for (j, draw) in draws.iter().enumerate() {
            let (task, ri) = self.lookup(draw)?;
            let record = &task.records[ri];
            // Per-draw generator: results do not depend on how shards are scheduled.
            let mut rng = derive_rng(self.seed, &format!("pack/{shard}/{j}"));
            let formats = task.formats();
            let fi = match &record.template_id {
                Some(id) => task.template_index(id).ok_or_else(|| {
                    Failure::input(format!("record `{}` pins unknown template `{id}`", record.record_id))
                })?,
                None => rng.random_range(0..formats.len()),
            };
            let rendered = match &self.metaicl {
                Some(cfg) if task.records.len() > 1 => {
                    let pool: Vec<&RawRecord> = task
                        .records
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != ri)
                        .map(|(_, r)| r)
                        .collect();
                    let cap = cfg.cap_k.min(pool.len());
                    let (c, sampler) = match samplers.entry(cap) {
                        Entry::Occupied(e) => e.into_mut(),
                        Entry::Vacant(e) => {
                            if cap < cfg.cap_k {
                                log::warn!(
                                    "task `{}` has {} records; demonstrations capped at {cap}",
                                    task.spec.task_id,
                                    task.records.len()
                                );
                            }
                            let c = MetaIclConfig {
                                cap_k: cap,
                                ..cfg.clone()
                            };
                            let sampler = DemoCountSampler::new(&c)?;
                            e.insert((c, sampler))
                        }
                    };
                    build_metaicl_with(
                        &task.spec.task_id,
                        record,
                        &pool,
                        formats[fi],
                        c,
                        sampler,
                        &self.delimiters,
                        &mut rng,
                    )?
                }
                _ => render_zero_shot_format(record, formats[fi], &self.delimiters, &task.spec.task_id, &mut rng)?,
            };
            let tokenized = tokenize_rendered(&rendered, self.tokenizer)?;
            let full_len = tokenized.len();
            stats.examples += 1;
            match left_truncate(tokenized, self.seq_len)? {
                Truncated::Kept(ex) => {
                    if ex.len() < full_len {
                        stats.truncated += 1;
                    }
                    if let Some(seq) = packer.push(&ex)? {
                        stats.count(&seq);
                        seqs.push(seq);
                    }
                }
                Truncated::Dropped => {
                    log::warn!(
                        "dropping `{}/{}`: truncation removed its target",
                        draw.task_id,
                        draw.record_id
                    );
                    stats.dropped += 1;
                }
            }
        }
        if let Some(seq) = packer.flush() {
            stats.count(&seq);
            seqs.push(seq);
        }
        Ok((seqs, stats))
    }
}

pub fn cmd_pack(ctx: &Context, args: &PackArgs) -> Result<Outcome, Failure> {
    let seed = ctx.seed("pack")?;
    let tokenizer_spec = ctx.tokenizer_spec(&args.tokenizer);
    let tokenizer = instructmix::tokenizer::tokenizer_from_spec(&tokenizer_spec)?;
    let seq_len = pick(args.seq_len, ctx.file.seq_len, DEFAULT_SEQ_LEN);
    if seq_len == 0 || u32::try_from(seq_len).is_err() {
        return Err(Failure::input(format!("invalid --seq-len {seq_len}")));
    }
    let metaicl = if args.metaicl || ctx.file.metaicl.unwrap_or(false) {
        let d = MetaIclConfig::default();
        let suffix = args.suffix_loss || ctx.file.suffix_loss.unwrap_or(false);
        let cfg = MetaIclConfig {
            zipf_a: pick(args.zipf_a, ctx.file.zipf_a, d.zipf_a),
            cap_k: pick(args.cap_k, ctx.file.cap_k, d.cap_k),
            loss_variant: if suffix {
                LossVariant::Suffix
            } else {
                LossVariant::Standard
            },
            ..d
        };
        cfg.validate()?;
        Some(cfg)
    } else {
        None
    };

    let mut out = ctx.out_dir("pack")?;
    let (registry, reg_path) = load_registry(&args.registry)?;
    let shards = stream_shards(&args.stream)?;
    let packing = Packing::new(&registry, tokenizer.as_ref(), seq_len, seed, metaicl.clone());

    let results = shards
        .par_iter()
        .map(|(n, path)| packing.shard(*n, &read_draws(path)?))
        .collect::<Result<Vec<_>, Failure>>()?;

    let header = ShardHeader {
        seq_len: seq_len as u32,
        vocab_size: tokenizer.vocab_size() as u32,
        seed,
    };
    let mut total = ShardStats::default();
    let mut per_shard = Vec::with_capacity(results.len());
    for (seqs, stats) in results {
        let mut buf = Vec::new();
        write_shard(&mut buf, &header, &seqs)?;
        out.write(&packed_file(stats.shard.expect("per-shard stats")), &buf)?;
        total.add(&stats);
        per_shard.push(stats);
    }
    let message = format!(
        "packed {} examples into {} sequences of {seq_len} tokens ({} dropped, {} truncated)\n",
        total.examples, total.sequences, total.dropped, total.truncated
    );
    out.write_json(
        STATS_FILE,
        &PackStats {
            total,
            shards: per_shard,
        },
    )?;

    let settings = PackSettings {
        seed,
        tokenizer: tokenizer.name().to_string(),
        seq_len,
        metaicl,
    };
    let mut run = RunManifest::new("pack", ctx.workers, &settings).input(&reg_path)?;
    for (_, p) in &shards {
        run = run.input(p)?;
    }
    let dir = out.finish(run)?;
    Ok(Outcome {
        message,
        out_dir: Some(dir),
    })
}
