//! 13-gram overlap detection between train and eval tasks.
//!
//! Text is lowercased and split on Unicode whitespace; each window of
//! [`NGRAM`] consecutive tokens is fingerprinted with 64-bit XXH3 over the
//! space-joined window. With `n` distinct windows the chance of any collision
//! is roughly `n^2 / 2^65`, negligible below ~10^8 windows.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::corpus::{Registry, Task};
use crate::error::{Error, Result};
use crate::prompting::{render_zero_shot_format, DelimiterSet};
use crate::seed::derive_rng;

pub const NGRAM: usize = 13;

pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShingleSet {
    pub hashes: HashSet<u64>,
    pub token_count: usize,
}

impl ShingleSet {
    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn shares_any(&self, other: &HashSet<u64>) -> bool {
        self.hashes.iter().any(|h| other.contains(h))
    }
}

fn lowered_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Fingerprints every 13-token window of `text`.
pub fn shingle(text: &str) -> ShingleSet {
    let tokens = lowered_tokens(text);
    let hashes = tokens.windows(NGRAM).map(|w| xxh3_64(w.join(" ").as_bytes())).collect();
    ShingleSet {
        hashes,
        token_count: tokens.len(),
    }
}

/// Exact (unhashed) 13-gram set, for collision-free comparisons.
pub fn shingle_exact(text: &str) -> HashSet<Vec<String>> {
    lowered_tokens(text).windows(NGRAM).map(<[String]>::to_vec).collect()
}

/// Fraction of eval examples sharing at least one 13-gram with any train
/// example. Each example is a list of its instantiated sequences.
pub fn overlap_fraction<E, T>(eval_examples: &[E], train_examples: &[T]) -> Result<f64>
where
    E: AsRef<[String]> + Sync,
    T: AsRef<[String]> + Sync,
{
    if eval_examples.is_empty() {
        return Err(Error::InvalidArgument("eval task has no examples".into()));
    }
    let train = pooled_fingerprints(train_examples);
    let eval = example_fingerprints(eval_examples);
    Ok(fraction_against(&eval, &train))
}

/// Union of the fingerprints of all sequences.
pub fn pooled_fingerprints<T: AsRef<[String]> + Sync>(examples: &[T]) -> HashSet<u64> {
    examples
        .par_iter()
        .map(|e| {
            e.as_ref()
                .iter()
                .flat_map(|s| shingle(s).hashes)
                .collect::<HashSet<u64>>()
        })
        .reduce(HashSet::new, |mut a, b| {
            a.extend(b);
            a
        })
}

/// Per-example fingerprint sets.
pub fn example_fingerprints<E: AsRef<[String]> + Sync>(examples: &[E]) -> Vec<ShingleSet> {
    examples
        .par_iter()
        .map(|e| {
            let mut set = ShingleSet::default();
            for s in e.as_ref() {
                let sh = shingle(s);
                set.token_count += sh.token_count;
                set.hashes.extend(sh.hashes);
            }
            set
        })
        .collect()
}

fn fraction_against(eval: &[ShingleSet], train: &HashSet<u64>) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let hits = eval.iter().filter(|e| e.shares_any(train)).count();
    hits as f64 / eval.len() as f64
}

/// Instantiated sequences of every record: `source ‖ target` under each of
/// the task's prompt formats.
pub fn instantiated_sequences(task: &Task, seed: u64) -> Result<Vec<Vec<String>>> {
    let delims = DelimiterSet::default();
    let formats = task.formats();
    let mut rng = derive_rng(seed, &format!("dedup/{}", task.key()));
    task.records
        .iter()
        .map(|r| {
            formats
                .iter()
                .map(|f| Ok(render_zero_shot_format(r, *f, &delims, &task.spec.task_id, &mut rng)?.full_text()))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub eval_task: String,
    pub train_task: String,
    pub fraction: f64,
    pub flagged: bool,
}

/// Overlap of every (eval, train) task pair, sorted by fraction descending
/// (ties by eval then train id). Entries above `threshold` are flagged.
pub fn dedup_report(registry: &Registry, threshold: f64, seed: u64) -> Result<Vec<OverlapEntry>> {
    let eval: Vec<&Task> = registry.eval_tasks().collect();
    let train: Vec<&Task> = registry.train_tasks().collect();

    let train_prints: Vec<HashSet<u64>> = train
        .par_iter()
        .map(|t| Ok(pooled_fingerprints(&instantiated_sequences(t, seed)?)))
        .collect::<Result<_>>()?;
    let eval_prints: Vec<Vec<ShingleSet>> = eval
        .par_iter()
        .map(|t| Ok(example_fingerprints(&instantiated_sequences(t, seed)?)))
        .collect::<Result<_>>()?;

    let mut entries: Vec<OverlapEntry> = eval
        .par_iter()
        .zip(eval_prints.par_iter())
        .flat_map_iter(|(et, ep)| {
            train.iter().zip(&train_prints).map(move |(tt, tp)| {
                let fraction = fraction_against(ep, tp);
                OverlapEntry {
                    eval_task: et.spec.task_id.clone(),
                    train_task: tt.spec.task_id.clone(),
                    fraction,
                    flagged: fraction > threshold,
                }
            })
        })
        .collect();
    sort_entries(&mut entries);
    Ok(entries)
}

pub fn sort_entries(entries: &mut [OverlapEntry]) {
    entries.sort_by(|a, b| {
        b.fraction
            .total_cmp(&a.fraction)
            .then_with(|| a.eval_task.cmp(&b.eval_task))
            .then_with(|| a.train_task.cmp(&b.train_task))
    });
}

/// Writes the report as one JSON object per line.
pub fn write_report<W: Write>(entries: &[OverlapEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
