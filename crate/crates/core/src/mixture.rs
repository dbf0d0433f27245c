//! Training mixtures: EPS-capped example-proportional weights inside each
//! benchmark, explicit cross-benchmark proportions, auxiliary streams, the
//! sampled example stream and the nested subsets used for scaling studies.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{GeneralizationLevel, Registry, Split, TaskKey};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, shard_rng, PipelineRng};

/// Benchmark order of the `a/b/c/d/e/f/g` proportion shorthand.
pub const SHORTHAND_ORDER: [&str; 7] = ["crossfit", "exmix", "flan", "niv2", "promptsource", "t5", "uskg"];

pub const PRETRAIN: &str = "pretrain";
pub const REASONING: &str = "reasoning";
pub const DIALOGUE: &str = "dialogue";

pub const DEFAULT_EPS: u64 = 4096;

const SUM_TOL: f64 = 1e-12;

pub fn is_auxiliary(benchmark: &str) -> bool {
    matches!(benchmark, PRETRAIN | REASONING | DIALOGUE)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxProportions {
    #[serde(default)]
    pub pretrain: f64,
    #[serde(default)]
    pub reasoning: f64,
    #[serde(default)]
    pub dialogue: f64,
}

impl AuxProportions {
    pub fn total(&self) -> f64 {
        self.pretrain + self.reasoning + self.dialogue
    }

    fn entries(&self) -> [(&'static str, f64); 3] {
        [
            (PRETRAIN, self.pretrain),
            (REASONING, self.reasoning),
            (DIALOGUE, self.dialogue),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    #[serde(default = "default_eps")]
    pub eps: u64,
    pub benchmark_proportions: BTreeMap<String, f64>,
    #[serde(default)]
    pub aux_proportions: AuxProportions,
    #[serde(default)]
    pub seed: u64,
}

fn default_eps() -> u64 {
    DEFAULT_EPS
}

impl MixtureConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: MixtureConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps == 0 {
            return Err(Error::Config("eps must be at least 1".into()));
        }
        let mut sum = 0.0;
        for (b, p) in &self.benchmark_proportions {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::Config(format!(
                    "proportion of `{b}` must be non-negative, got {p}"
                )));
            }
            sum += p;
        }
        if !(sum > 0.0) {
            return Err(Error::Config("benchmark proportions sum to zero".into()));
        }
        for (name, p) in self.aux_proportions.entries() {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} proportion must be in [0, 1), got {p}")));
            }
        }
        if self.aux_proportions.total() >= 1.0 {
            return Err(Error::Config("auxiliary proportions sum to 1 or more".into()));
        }
        Ok(())
    }

    pub fn normalized_proportions(&self) -> BTreeMap<String, f64> {
        normalize(&self.benchmark_proportions)
    }
}

fn normalize(m: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let sum: f64 = m.values().sum();
    m.iter().map(|(k, v)| (k.clone(), v / sum)).collect()
}

/// Parses `"4/2/20/25/45/2/2"` into normalized proportions for
/// crossfit/exmix/flan/niv2/promptsource/t5/uskg.
pub fn parse_proportions(s: &str) -> Result<BTreeMap<String, f64>> {
    let parts: Vec<&str> = s.split('/').map(str::trim).collect();
    if parts.len() != SHORTHAND_ORDER.len() {
        return Err(Error::Config(format!(
            "proportion shorthand needs {} fields, got {} in {s:?}",
            SHORTHAND_ORDER.len(),
            parts.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (name, part) in SHORTHAND_ORDER.iter().zip(parts) {
        let v: f64 = part
            .parse()
            .map_err(|_| Error::Config(format!("bad proportion {part:?} in {s:?}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Config(format!("negative proportion in {s:?}")));
        }
        out.insert(name.to_string(), v);
    }
    let sum: f64 = out.values().sum();
    if !(sum > 0.0) {
        return Err(Error::Config(format!("proportions in {s:?} sum to zero")));
    }
    Ok(normalize(&out))
}

/// benchmark -> task -> weight.
pub type WithinWeights = BTreeMap<String, BTreeMap<String, f64>>;

/// benchmark -> task -> example count.
pub type TaskSizes = BTreeMap<String, BTreeMap<String, u64>>;

/// Example counts of the registry's train tasks, grouped by benchmark.
pub fn task_sizes(registry: &Registry) -> TaskSizes {
    let mut out = TaskSizes::new();
    for t in registry.train_tasks() {
        out.entry(t.spec.benchmark.clone())
            .or_default()
            .insert(t.spec.task_id.clone(), t.spec.num_examples);
    }
    out
}

/// Within-benchmark weights proportional to `min(size, eps)`.
pub fn eps_weights(sizes: &TaskSizes, eps: u64) -> Result<WithinWeights> {
    if eps == 0 {
        return Err(Error::InvalidArgument("eps must be at least 1".into()));
    }
    sizes
        .iter()
        .map(|(bench, tasks)| {
            let total: u64 = tasks.values().map(|&n| n.min(eps)).sum();
            if total == 0 {
                return Err(Error::InvalidArgument(format!("benchmark `{bench}` has no examples")));
            }
            let w = tasks
                .iter()
                .map(|(t, &n)| (t.clone(), n.min(eps) as f64 / total as f64))
                .collect();
            Ok((bench.clone(), w))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub per_task: BTreeMap<String, f64>,
    pub per_benchmark: BTreeMap<String, f64>,
    /// task -> benchmark
    pub task_benchmark: BTreeMap<String, String>,
}

impl SamplingWeights {
    fn compose(per_benchmark: BTreeMap<String, f64>, within: &WithinWeights) -> Self {
        let mut per_task = BTreeMap::new();
        let mut task_benchmark = BTreeMap::new();
        for (bench, p) in &per_benchmark {
            if let Some(tasks) = within.get(bench) {
                for (t, w) in tasks {
                    per_task.insert(t.clone(), p * w);
                    task_benchmark.insert(t.clone(), bench.clone());
                }
            }
        }
        SamplingWeights {
            per_task,
            per_benchmark,
            task_benchmark,
        }
    }

    pub fn check(&self) -> Result<()> {
        for (name, map) in [("task", &self.per_task), ("benchmark", &self.per_benchmark)] {
            if map.values().any(|p| !(*p >= 0.0)) {
                return Err(Error::Validation(format!("negative {name} weight")));
            }
            let sum: f64 = map.values().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::Validation(format!("{name} weights sum to {sum}")));
            }
        }
        Ok(())
    }
}

/// Scales each benchmark's within-weights by its normalized proportion.
///
/// Auxiliary pseudo-benchmarks are ignored here; see [`add_auxiliary`].
pub fn benchmark_mix(within: &WithinWeights, proportions: &BTreeMap<String, f64>) -> Result<SamplingWeights> {
    for bench in within.keys().filter(|b| !is_auxiliary(b)) {
        if !proportions.contains_key(bench) {
            return Err(Error::Config(format!(
                "no proportion configured for benchmark `{bench}`"
            )));
        }
    }
    for (bench, p) in proportions {
        if *p > 0.0 && !within.contains_key(bench) {
            return Err(Error::Config(format!(
                "benchmark `{bench}` has proportion {p} but no training tasks"
            )));
        }
    }
    let sum: f64 = proportions.values().sum();
    if !(sum > 0.0) {
        return Err(Error::Config("benchmark proportions sum to zero".into()));
    }
    Ok(SamplingWeights::compose(normalize(proportions), within))
}

/// Adds pre-training, dialogue and reasoning streams.
///
/// Pre-training and dialogue mass is taken from every benchmark in proportion
/// (global rescale). Reasoning mass is then subtracted from the single largest
/// benchmark, ties going to the lexicographically first name.
pub fn add_auxiliary(
    weights: &SamplingWeights,
    within: &WithinWeights,
    aux: &AuxProportions,
) -> Result<SamplingWeights> {
    let mut per_benchmark = weights.per_benchmark.clone();
    for (name, p) in aux.entries() {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} proportion must be in [0, 1)")));
        }
        if p > 0.0 && !within.contains_key(name) {
            return Err(Error::InvalidArgument(format!("no `{name}` corpus registered")));
        }
    }
    let drained = aux.pretrain + aux.dialogue;
    if drained > 0.0 {
        for v in per_benchmark.values_mut() {
            *v *= 1.0 - drained;
        }
        for (name, p) in [(PRETRAIN, aux.pretrain), (DIALOGUE, aux.dialogue)] {
            if p > 0.0 {
                per_benchmark.insert(name.to_string(), p);
            }
        }
    }
    if aux.reasoning > 0.0 {
        let (largest, &p_max) = per_benchmark
            .iter()
            .filter(|(b, _)| !is_auxiliary(b))
            .fold(None::<(&String, &f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .ok_or_else(|| Error::InvalidArgument("no benchmark to take reasoning mass from".into()))?;
        if aux.reasoning >= p_max {
            return Err(Error::InvalidArgument(format!(
                "reasoning proportion {} is not below the largest benchmark share {p_max} (`{largest}`)",
                aux.reasoning
            )));
        }
        let largest = largest.clone();
        *per_benchmark.get_mut(&largest).expect("present") -= aux.reasoning;
        per_benchmark.insert(REASONING.to_string(), aux.reasoning);
    }
    let out = SamplingWeights::compose(per_benchmark, within);
    out.check()?;
    Ok(out)
}

/// Full weight computation from a registry and config.
pub fn mixture_weights(registry: &Registry, cfg: &MixtureConfig) -> Result<SamplingWeights> {
    cfg.validate()?;
    let within = eps_weights(&task_sizes(registry), cfg.eps)?;
    let base = benchmark_mix(&within, &cfg.benchmark_proportions)?;
    add_auxiliary(&base, &within, &cfg.aux_proportions)
}

/// One sampled training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub task_id: String,
    pub record_id: String,
}

/// Endless i.i.d. stream of `(task, record)` draws.
///
/// Tasks are drawn by weight, records uniformly with replacement inside the
/// task.
pub struct MixtureStream<'a> {
    tasks: Vec<(&'a str, Vec<&'a str>)>,
    dist: WeightedIndex<f64>,
    rng: PipelineRng,
}

impl<'a> MixtureStream<'a> {
    pub fn new(weights: &SamplingWeights, registry: &'a Registry, seed: u64) -> Result<Self> {
        Self::with_rng(weights, registry, derive_rng(seed, "stream"))
    }

    /// Independent sub-stream `shard` of the stream rooted at `seed`.
    pub fn shard(weights: &SamplingWeights, registry: &'a Registry, seed: u64, shard: u64) -> Result<Self> {
        Self::with_rng(weights, registry, shard_rng(seed, "stream", shard))
    }

    fn with_rng(weights: &SamplingWeights, registry: &'a Registry, rng: PipelineRng) -> Result<Self> {
        let mut tasks = Vec::with_capacity(weights.per_task.len());
        let mut w = Vec::with_capacity(weights.per_task.len());
        for (task_id, &p) in &weights.per_task {
            let key = TaskKey {
                task_id: task_id.clone(),
                split: Split::Train,
            };
            let task = registry
                .task(&key)
                .ok_or_else(|| Error::Config(format!("weighted task `{task_id}` is not a train task")))?;
            if p > 0.0 && task.records.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "task `{task_id}` has weight {p} but no records"
                )));
            }
            tasks.push((
                task.spec.task_id.as_str(),
                task.records.iter().map(|r| r.record_id.as_str()).collect(),
            ));
            w.push(p);
        }
        let dist = WeightedIndex::new(&w).map_err(|e| Error::InvalidArgument(format!("task weights: {e}")))?;
        Ok(MixtureStream { tasks, dist, rng })
    }
}

impl<'a> Iterator for MixtureStream<'a> {
    type Item = (&'a str, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        let (task, records) = &self.tasks[self.dist.sample(&mut self.rng)];
        let r = records[self.rng.random_range(0..records.len())];
        Some((task, r))
    }
}

/// Draws `total` examples split into shards of `shard_size`, shard `i` using
/// sub-stream `i`. The result does not depend on the rayon pool size.
pub fn materialize_shards(
    weights: &SamplingWeights,
    registry: &Registry,
    seed: u64,
    total: u64,
    shard_size: u64,
) -> Result<Vec<Vec<Draw>>> {
    if shard_size == 0 {
        return Err(Error::InvalidArgument("shard size must be positive".into()));
    }
    let n_shards = total.div_ceil(shard_size);
    (0..n_shards)
        .into_par_iter()
        .map(|i| {
            let len = shard_size.min(total - i * shard_size) as usize;
            let stream = MixtureStream::shard(weights, registry, seed, i)?;
            Ok(stream
                .take(len)
                .map(|(t, r)| Draw {
                    task_id: t.to_string(),
                    record_id: r.to_string(),
                })
                .collect())
        })
        .collect()
}

fn check_ascending(sizes: &[usize], what: &str) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument(format!("no {what} given")));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be strictly ascending: {sizes:?}"
        )));
    }
    Ok(())
}

/// Nested random subsets of the train tasks, one per entry of `sizes`.
///
/// Train tasks that also serve fully supervised evaluation are in every
/// subset.
pub fn subset_tasks(registry: &Registry, sizes: &[usize], seed: u64) -> Result<Vec<BTreeSet<String>>> {
    check_ascending(sizes, "subset sizes")?;
    let pool: BTreeSet<&str> = registry.train_tasks().map(|t| t.spec.task_id.as_str()).collect();
    let forced: BTreeSet<&str> = registry
        .eval_tasks()
        .filter(|t| t.spec.generalization_level == Some(GeneralizationLevel::FullySupervised))
        .map(|t| t.spec.task_id.as_str())
        .filter(|id| pool.contains(id))
        .collect();
    let largest = *sizes.last().expect("non-empty");
    if largest > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {largest} exceeds the {} train tasks",
            pool.len()
        )));
    }
    if forced.len() > sizes[0] {
        return Err(Error::InvalidArgument(format!(
            "{} fully supervised tasks do not fit in a subset of {}",
            forced.len(),
            sizes[0]
        )));
    }
    let mut rest: Vec<&str> = pool.difference(&forced).copied().collect();
    rest.shuffle(&mut derive_rng(seed, "subset_tasks"));
    Ok(sizes
        .iter()
        .map(|&n| {
            forced
                .iter()
                .copied()
                .chain(rest[..n - forced.len()].iter().copied())
                .map(str::to_owned)
                .collect()
        })
        .collect())
}

/// Nested category subsets: the largest categories by train-task count
/// (ties by name), with `always_include` forced into every subset.
pub fn subset_clusters(
    registry: &Registry,
    counts: &[usize],
    always_include: &BTreeSet<String>,
) -> Result<Vec<BTreeSet<String>>> {
    check_ascending(counts, "cluster counts")?;
    let mut sizes: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in registry.train_tasks() {
        sizes.entry(&t.spec.category).or_default().insert(&t.spec.task_id);
    }
    for c in always_include {
        if !sizes.contains_key(c.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown category `{c}`")));
        }
    }
    if always_include.len() > counts[0] {
        return Err(Error::InvalidArgument(format!(
            "{} forced categories do not fit in {}",
            always_include.len(),
            counts[0]
        )));
    }
    let largest = *counts.last().expect("non-empty");
    if largest > sizes.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {largest} exceeds the {} categories",
            sizes.len()
        )));
    }
    let mut ranking: Vec<(&str, usize)> = sizes
        .iter()
        .filter(|(c, _)| !always_include.contains(**c))
        .map(|(c, t)| (*c, t.len()))
        .collect();
    ranking.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(counts
        .iter()
        .map(|&n| {
            always_include
                .iter()
                .cloned()
                .chain(ranking[..n - always_include.len()].iter().map(|(c, _)| c.to_string()))
                .collect()
        })
        .collect())
}
