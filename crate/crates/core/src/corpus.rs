//! Task registry, record ingestion, per-task example caps and the
//! three-level generalization split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::prompting::{self, DelimiterSet, PromptFormat, PromptTemplate, TemplateStyle};
use crate::seed::derive_rng;
use crate::tokenizer::Tokenizer;

/// Default per-task example cap.
pub const DEFAULT_EXAMPLE_CAP: u64 = 100_000;

/// Example cap used for FLAN tasks.
pub const FLAN_EXAMPLE_CAP: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionStyle {
    TaskLevel,
    InstanceLevel,
    Keywords,
    Raw,
}

impl InstructionStyle {
    /// Whether a template of `style` may belong to a benchmark of this style.
    pub fn accepts(self, style: TemplateStyle) -> bool {
        match self {
            InstructionStyle::TaskLevel => style == TemplateStyle::TaskLevel,
            InstructionStyle::InstanceLevel | InstructionStyle::Keywords => style == TemplateStyle::InstanceLevel,
            InstructionStyle::Raw => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub instruction_style: InstructionStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn is_eval(self) -> bool {
        !matches!(self, Split::Train)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralizationLevel {
    FullyHeldOut,
    PartiallySupervised,
    FullySupervised,
}

/// Registry key: the same task may have a train entry and an eval entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub task_id: String,
    pub split: Split,
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.task_id, self.split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub benchmark: String,
    pub category: String,
    pub data_source: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalization_level: Option<GeneralizationLevel>,
    pub example_cap: u64,
    pub num_examples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
}

impl TaskSpec {
    pub fn key(&self) -> TaskKey {
        TaskKey {
            task_id: self.task_id.clone(),
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub record_id: String,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

impl RawRecord {
    pub fn new(record_id: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        RawRecord {
            record_id: record_id.into(),
            source: source.into(),
            target: target.into(),
            candidates: None,
            template_id: None,
        }
    }

    /// A dialogue rendered as its turns separated by a single newline; the
    /// whole sequence is the training target.
    pub fn dialogue<S: AsRef<str>>(record_id: impl Into<String>, turns: &[S]) -> Self {
        let text = turns.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n");
        RawRecord::new(record_id, "", text)
    }
}

// Wire form of a record line; `target` is optional so that its absence can be
// reported with the offending line number.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    record_id: String,
    source: String,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    candidates: Option<Vec<String>>,
    #[serde(default)]
    template_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub spec: TaskSpec,
    #[serde(default)]
    pub templates: Vec<PromptTemplate>,
    pub records: Vec<RawRecord>,
}

impl Task {
    pub fn key(&self) -> TaskKey {
        self.spec.key()
    }

    /// Prompt formats available to this task; tasks without templates render raw.
    pub fn formats(&self) -> Vec<PromptFormat<'_>> {
        if self.templates.is_empty() {
            vec![PromptFormat::Raw]
        } else {
            self.templates.iter().map(PromptFormat::Template).collect()
        }
    }

    pub fn template_index(&self, template_id: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.template_id == template_id)
    }
}

/// One task entry of a manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTask {
    pub task_id: String,
    pub benchmark: String,
    pub category: String,
    /// Defaults to `task_id`.
    #[serde(default)]
    pub data_source: Option<String>,
    pub records_path: PathBuf,
    #[serde(default = "default_cap")]
    pub example_cap: u64,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub subtask: Option<String>,
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub templates: Vec<PromptTemplate>,
    /// Line-delimited template file, appended to `templates`.
    #[serde(default)]
    pub templates_path: Option<PathBuf>,
}

fn default_cap() -> u64 {
    DEFAULT_EXAMPLE_CAP
}

fn default_split() -> Split {
    Split::Train
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub benchmarks: Vec<Benchmark>,
    pub tasks: Vec<ManifestTask>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Parses a line-delimited record file.
pub fn read_records(path: &Path, split: Split) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path, split)
}

pub fn parse_records(text: &str, path: &Path, split: Split) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message,
        };
        let raw: RecordLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let target = match (raw.target, split) {
            (Some(t), Split::Train) if t.is_empty() => {
                return Err(parse_err("empty `target` in a train record".into()))
            }
            (Some(t), _) => t,
            (None, Split::Train) => return Err(parse_err("missing field `target`".into())),
            (None, _) => String::new(),
        };
        if let Some(cands) = &raw.candidates {
            if !target.is_empty() && !cands.contains(&target) {
                return Err(Error::Validation(format!(
                    "{}:{line_no}: target {target:?} is not among the candidates",
                    path.display()
                )));
            }
        }
        if !seen.insert(raw.record_id.clone()) {
            return Err(parse_err(format!("duplicate record_id `{}`", raw.record_id)));
        }
        records.push(RawRecord {
            record_id: raw.record_id,
            source: raw.source,
            target,
            candidates: raw.candidates,
            template_id: raw.template_id,
        });
    }
    Ok(records)
}

pub fn read_templates(path: &Path) -> Result<Vec<PromptTemplate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Set of tasks keyed by `(task_id, split)` together with their benchmarks.
///
/// Built by a single writer, then shared read-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegistryFile", into = "RegistryFile")]
pub struct Registry {
    benchmarks: BTreeMap<String, Benchmark>,
    tasks: BTreeMap<TaskKey, Task>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    benchmarks: Vec<Benchmark>,
    tasks: Vec<Task>,
}

impl From<Registry> for RegistryFile {
    fn from(r: Registry) -> Self {
        RegistryFile {
            benchmarks: r.benchmarks.into_values().collect(),
            tasks: r.tasks.into_values().collect(),
        }
    }
}

impl TryFrom<RegistryFile> for Registry {
    type Error = Error;

    fn try_from(f: RegistryFile) -> Result<Self> {
        let mut reg = Registry::new();
        for b in f.benchmarks {
            reg.add_benchmark(b)?;
        }
        for t in f.tasks {
            reg.insert_task(t)?;
        }
        Ok(reg)
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_benchmark(&mut self, benchmark: Benchmark) -> Result<()> {
        match self.benchmarks.get(&benchmark.name) {
            Some(existing) if existing.instruction_style != benchmark.instruction_style => Err(Error::Conflict(
                format!("benchmark `{}` registered with two instruction styles", benchmark.name),
            )),
            Some(_) => Err(Error::Conflict(format!("duplicate benchmark `{}`", benchmark.name))),
            None => {
                self.benchmarks.insert(benchmark.name.clone(), benchmark);
                Ok(())
            }
        }
    }

    pub fn benchmark(&self, name: &str) -> Option<&Benchmark> {
        self.benchmarks.get(name)
    }

    pub fn benchmarks(&self) -> impl Iterator<Item = &Benchmark> {
        self.benchmarks.values()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn task(&self, key: &TaskKey) -> Option<&Task> {
        self.tasks.get(key)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn train_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values().filter(|t| t.spec.split == Split::Train)
    }

    pub fn eval_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values().filter(|t| t.spec.split.is_eval())
    }

    /// Registers a fully-formed task after validating it against its benchmark.
    pub fn insert_task(&mut self, task: Task) -> Result<()> {
        let key = task.key();
        if self.tasks.contains_key(&key) {
            return Err(Error::Conflict(format!("duplicate task `{key}`")));
        }
        let bench = self.benchmarks.get(&task.spec.benchmark).ok_or_else(|| {
            Error::Config(format!(
                "task `{key}` references unknown benchmark `{}`",
                task.spec.benchmark
            ))
        })?;
        for tpl in &task.templates {
            if !bench.instruction_style.accepts(tpl.instruction_style) {
                return Err(Error::Validation(format!(
                    "template `{}` of task `{key}` has style {:?}, benchmark `{}` is {:?}",
                    tpl.template_id, tpl.instruction_style, bench.name, bench.instruction_style
                )));
            }
        }
        if task.spec.example_cap == 0 {
            return Err(Error::InvalidArgument(format!("task `{key}` has example_cap 0")));
        }
        if let Some(cat) = self
            .tasks
            .values()
            .find(|t| t.spec.task_id == task.spec.task_id && t.spec.category != task.spec.category)
        {
            return Err(Error::Conflict(format!(
                "task `{}` assigned to categories `{}` and `{}`",
                task.spec.task_id, cat.spec.category, task.spec.category
            )));
        }
        self.tasks.insert(key, task);
        Ok(())
    }

    /// Reads one manifest entry's files and registers the task.
    pub fn ingest_task(&mut self, entry: &ManifestTask, base_dir: &Path) -> Result<&TaskSpec> {
        let task = load_task(entry, base_dir)?;
        let key = task.key();
        self.insert_task(task)?;
        Ok(&self.tasks[&key].spec)
    }

    /// Builds a registry from a manifest, reading record files in parallel and
    /// applying each task's example cap with a seed derived from `seed`.
    pub fn from_manifest(manifest: &Manifest, base_dir: &Path, seed: u64) -> Result<Self> {
        let mut reg = Registry::new();
        for b in &manifest.benchmarks {
            reg.add_benchmark(b.clone())?;
        }
        let loaded: Vec<Result<Task>> = manifest
            .tasks
            .par_iter()
            .map(|entry| load_task(entry, base_dir))
            .collect();
        for task in loaded {
            let task = task?;
            let cap = task.spec.example_cap;
            let task = cap_examples(&task, cap, seed)?;
            reg.insert_task(task)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    /// Task ids grouped by category, over all splits.
    pub fn categories(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for t in self.tasks.values() {
            out.entry(t.spec.category.as_str())
                .or_default()
                .insert(t.spec.task_id.as_str());
        }
        out
    }
}

fn load_task(entry: &ManifestTask, base_dir: &Path) -> Result<Task> {
    let records_path = base_dir.join(&entry.records_path);
    let records = read_records(&records_path, entry.split)?;
    if records.is_empty() {
        log::warn!("task `{}`: {} is empty", entry.task_id, records_path.display());
    }
    let mut templates = entry.templates.clone();
    if let Some(p) = &entry.templates_path {
        templates.extend(read_templates(&base_dir.join(p))?);
    }
    let mut seen = BTreeSet::new();
    for t in &templates {
        if !seen.insert(t.template_id.as_str()) {
            return Err(Error::Conflict(format!(
                "task `{}` has duplicate template `{}`",
                entry.task_id, t.template_id
            )));
        }
    }
    Ok(Task {
        spec: TaskSpec {
            task_id: entry.task_id.clone(),
            benchmark: entry.benchmark.clone(),
            category: entry.category.clone(),
            data_source: entry.data_source.clone().unwrap_or_else(|| entry.task_id.clone()),
            split: entry.split,
            generalization_level: None,
            example_cap: entry.example_cap,
            num_examples: records.len() as u64,
            subtask: entry.subtask.clone(),
            metric: entry.metric,
        },
        templates,
        records,
    })
}

/// Keeps at most `cap` records, chosen uniformly without replacement.
///
/// Retained records keep their original relative order. The choice depends
/// only on `(seed, task key)`.
pub fn cap_examples(task: &Task, cap: u64, seed: u64) -> Result<Task> {
    if cap == 0 {
        return Err(Error::InvalidArgument("example cap must be positive".into()));
    }
    let n = task.records.len();
    let mut out = task.clone();
    out.spec.example_cap = cap;
    if (n as u64) <= cap {
        out.spec.num_examples = n as u64;
        return Ok(out);
    }
    let mut rng = derive_rng(seed, &format!("cap/{}", task.key()));
    let mut keep = index::sample(&mut rng, n, cap as usize).into_vec();
    keep.sort_unstable();
    out.records = keep.into_iter().map(|i| task.records[i].clone()).collect();
    out.spec.num_examples = cap;
    Ok(out)
}

/// Declares which eval tasks land in which generalization level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(default)]
    pub held_out_categories: BTreeSet<String>,
    /// Category -> eval task ids held out from that (otherwise seen) category.
    #[serde(default)]
    pub partially_held_tasks: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub supervised_eval_tasks: BTreeSet<String>,
}

impl SplitPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Level requested by the plan for each task id mentioned directly, plus
    /// the held-out categories.
    fn task_levels(&self, registry: &Registry) -> Result<BTreeMap<String, GeneralizationLevel>> {
        let categories = registry.categories();
        for cat in &self.held_out_categories {
            if !categories.contains_key(cat.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown category `{cat}` in plan")));
            }
        }
        let mut levels = BTreeMap::new();
        let mut assign = |task: &str, level: GeneralizationLevel| -> Result<()> {
            match levels.insert(task.to_string(), level) {
                Some(prev) if prev != level => Err(Error::Conflict(format!(
                    "task `{task}` assigned to both {prev:?} and {level:?}"
                ))),
                _ => Ok(()),
            }
        };
        for (cat, tasks) in &self.partially_held_tasks {
            let members = categories
                .get(cat.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{cat}` in plan")))?;
            for t in tasks {
                if !members.contains(t.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "task `{t}` is not a member of category `{cat}`"
                    )));
                }
                if self.held_out_categories.contains(cat) {
                    return Err(Error::Conflict(format!(
                        "task `{t}` is partially held out but its category `{cat}` is fully held out"
                    )));
                }
                assign(t, GeneralizationLevel::PartiallySupervised)?;
            }
        }
        let all_ids: BTreeSet<&str> = categories.values().flatten().copied().collect();
        for t in &self.supervised_eval_tasks {
            if !all_ids.contains(t.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown task `{t}` in plan")));
            }
            assign(t, GeneralizationLevel::FullySupervised)?;
        }
        for (cat, members) in &categories {
            if self.held_out_categories.contains(*cat) {
                for t in members {
                    assign(t, GeneralizationLevel::FullyHeldOut)?;
                }
            }
        }
        Ok(levels)
    }
}

/// Labels every task with its generalization level.
///
/// Train entries of partially held-out tasks are dropped. Train tasks inside a
/// held-out category and eval tasks sharing a data source with a remaining
/// train task are conflicts.
pub fn assign_splits(registry: &Registry, plan: &SplitPlan) -> Result<Registry> {
    let levels = plan.task_levels(registry)?;
    let mut out = Registry {
        benchmarks: registry.benchmarks.clone(),
        tasks: BTreeMap::new(),
    };
    for (key, task) in &registry.tasks {
        let mut task = task.clone();
        let requested = levels.get(&key.task_id).copied();
        if key.split == Split::Train {
            match requested {
                Some(GeneralizationLevel::FullyHeldOut) => {
                    return Err(Error::Conflict(format!(
                        "held-out category `{}` contains train task `{key}`",
                        task.spec.category
                    )))
                }
                Some(GeneralizationLevel::PartiallySupervised) => {
                    log::info!("removing `{key}` from train: partially held out");
                    continue;
                }
                _ => task.spec.generalization_level = Some(GeneralizationLevel::FullySupervised),
            }
        } else {
            let level = requested
                .ok_or_else(|| Error::Validation(format!("eval task `{key}` is not assigned a level by the plan")))?;
            task.spec.generalization_level = Some(level);
        }
        out.tasks.insert(key.clone(), task);
    }

    let train_ids: BTreeSet<&str> = out.train_tasks().map(|t| t.spec.task_id.as_str()).collect();
    let train_sources: BTreeMap<&str, &str> = out
        .train_tasks()
        .map(|t| (t.spec.data_source.as_str(), t.spec.task_id.as_str()))
        .collect();
    for task in out.eval_tasks() {
        let id = task.spec.task_id.as_str();
        match task.spec.generalization_level {
            Some(GeneralizationLevel::FullySupervised) => {
                if !train_ids.contains(id) {
                    return Err(Error::Conflict(format!(
                        "supervised eval task `{id}` has no train entry"
                    )));
                }
            }
            Some(level) => {
                if let Some(train) = train_sources.get(task.spec.data_source.as_str()) {
                    return Err(Error::Conflict(format!(
                        "{level:?} eval task `{id}` shares data source `{}` with train task `{train}`",
                        task.spec.data_source
                    )));
                }
                if level == GeneralizationLevel::PartiallySupervised
                    && !out.train_tasks().any(|t| t.spec.category == task.spec.category)
                {
                    log::warn!(
                        "partially held task `{id}`: category `{}` has no remaining train tasks",
                        task.spec.category
                    );
                }
            }
            None => unreachable!("eval tasks are always labelled above"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub key: String,
    pub tasks: usize,
    pub examples: u64,
    pub avg_prompts_per_task: f64,
    pub prompt_len_mean: f64,
    pub prompt_len_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryStats {
    pub benchmarks: Vec<StatsRow>,
    pub categories: Vec<StatsRow>,
    pub total_tasks: usize,
    pub total_examples: u64,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-benchmark and per-category counts and prompt-length statistics.
///
/// Prompt length is the token count of each record rendered zero-shot with the
/// template `merge_prompts` assigns it.
pub fn registry_stats(registry: &Registry, tokenizer: &dyn Tokenizer, seed: u64) -> Result<RegistryStats> {
    #[derive(Default)]
    struct Acc {
        tasks: BTreeSet<String>,
        examples: u64,
        prompts: usize,
        lengths: Vec<f64>,
    }
    let delims = DelimiterSet::default();
    let mut by_bench: BTreeMap<String, Acc> = BTreeMap::new();
    let mut by_cat: BTreeMap<String, Acc> = BTreeMap::new();
    for task in registry.tasks() {
        let key = task.key();
        let formats = task.formats();
        let pairs = prompting::merge_prompts(task, seed)?;
        let mut rng = derive_rng(seed, &format!("stats/{key}"));
        let mut lengths = Vec::with_capacity(pairs.len());
        for (ri, fi) in pairs {
            let r = prompting::render_zero_shot_format(
                &task.records[ri],
                formats[fi],
                &delims,
                &task.spec.task_id,
                &mut rng,
            )?;
            lengths.push(tokenizer.encode(&r.full_text())?.len() as f64);
        }
        let n_prompts = task.templates.len().max(1);
        for (map, k) in [
            (&mut by_bench, &task.spec.benchmark),
            (&mut by_cat, &task.spec.category),
        ] {
            let acc = map.entry(k.clone()).or_default();
            if acc.tasks.insert(key.to_string()) {
                acc.prompts += n_prompts;
            }
            acc.examples += task.spec.num_examples;
            acc.lengths.extend_from_slice(&lengths);
        }
    }
    let rows = |m: BTreeMap<String, Acc>| -> Vec<StatsRow> {
        m.into_iter()
            .map(|(key, acc)| {
                let (mean, std) = mean_std(&acc.lengths);
                StatsRow {
                    key,
                    tasks: acc.tasks.len(),
                    examples: acc.examples,
                    avg_prompts_per_task: acc.prompts as f64 / acc.tasks.len().max(1) as f64,
                    prompt_len_mean: mean,
                    prompt_len_std: std,
                }
            })
            .collect()
    };
    Ok(RegistryStats {
        total_tasks: registry.len(),
        total_examples: registry.tasks().map(|t| t.spec.num_examples).sum(),
        benchmarks: rows(by_bench),
        categories: rows(by_cat),
    })
}
