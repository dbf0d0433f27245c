//! Prompt rendering: bipartite templates, the output delimiter rule,
//! demonstration placement and MetaICL example construction.
//!
//! A rendered prompt is `source_text ‖ target_text`. Loss spans are byte
//! offsets into that concatenation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{RawRecord, Task};
use crate::error::{Error, Result};
use crate::seed::derive_rng;

/// Joins a task-level instruction header to the examples that follow it.
pub const HEADER_JOINER: &str = "\n\n";

/// Demonstration separator used while training with demonstrations.
pub const TRAIN_SEPARATOR: &str = "\n\n\n";

/// Demonstration separator used at few-shot inference time.
pub const INFERENCE_SEPARATOR: &str = "\n\n";

pub const DEFAULT_DELIMITERS: [&str; 8] = [
    "\nAnswer:",
    " Answer:",
    "\nA:",
    " A:",
    "\nOutput:",
    " Output:",
    "\nanswer:",
    "\noutput:",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    /// One instruction for the whole task; demonstrations go between the
    /// instruction and the example.
    TaskLevel,
    /// The instruction is instantiated per example; demonstrations precede it.
    InstanceLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub instruction_style: TemplateStyle,
    /// Task-level: the task description. Instance-level: the full
    /// per-example instruction with `{field}` placeholders.
    pub instruction_text: String,
    /// Task-level only: the per-example input, `{source}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_text: Option<String>,
    #[serde(default = "default_output_field")]
    pub output_field: String,
}

fn default_output_field() -> String {
    "target".into()
}

impl PromptTemplate {
    pub fn instance(id: impl Into<String>, instruction: impl Into<String>) -> Self {
        PromptTemplate {
            template_id: id.into(),
            instruction_style: TemplateStyle::InstanceLevel,
            instruction_text: instruction.into(),
            input_text: None,
            output_field: default_output_field(),
        }
    }

    pub fn task(id: impl Into<String>, description: impl Into<String>, input: Option<&str>) -> Self {
        PromptTemplate {
            template_id: id.into(),
            instruction_style: TemplateStyle::TaskLevel,
            instruction_text: description.into(),
            input_text: input.map(str::to_owned),
            output_field: default_output_field(),
        }
    }
}

/// How an example is turned into text: through a template, or verbatim for
/// template-less corpora (pre-training text, dialogue).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptFormat<'a> {
    Template(&'a PromptTemplate),
    Raw,
}

impl PromptFormat<'_> {
    pub fn template_id(&self) -> Option<&str> {
        match self {
            PromptFormat::Template(t) => Some(&t.template_id),
            PromptFormat::Raw => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct DelimiterSet {
    delimiters: Vec<String>,
}

impl DelimiterSet {
    pub fn new(delimiters: Vec<String>) -> Result<Self> {
        if delimiters.is_empty() {
            return Err(Error::InvalidArgument("delimiter set is empty".into()));
        }
        for (i, d) in delimiters.iter().enumerate() {
            if delimiters[..i].contains(d) {
                return Err(Error::InvalidArgument(format!("duplicate delimiter {d:?}")));
            }
        }
        Ok(DelimiterSet { delimiters })
    }

    pub fn as_slice(&self) -> &[String] {
        &self.delimiters
    }

    pub fn len(&self) -> usize {
        self.delimiters.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> &str {
        &self.delimiters[i]
    }

    /// Uniformly sampled delimiter index.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.delimiters.len())
    }
}

impl Default for DelimiterSet {
    fn default() -> Self {
        DelimiterSet {
            delimiters: DEFAULT_DELIMITERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for DelimiterSet {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        DelimiterSet::new(v)
    }
}

impl From<DelimiterSet> for Vec<String> {
    fn from(d: DelimiterSet) -> Self {
        d.delimiters
    }
}

/// Half-open byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub task_id: String,
    pub record_id: String,
    pub template_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub source_text: String,
    pub target_text: String,
    pub loss_spans: Vec<Span>,
    pub shots: usize,
    pub provenance: Provenance,
    pub demo_record_ids: Vec<String>,
}

impl RenderedExample {
    pub fn full_text(&self) -> String {
        let mut s = String::with_capacity(self.source_text.len() + self.target_text.len());
        s.push_str(&self.source_text);
        s.push_str(&self.target_text);
        s
    }

    pub fn target_span(&self) -> Span {
        let start = self.source_text.len();
        Span::new(start, start + self.target_text.len())
    }

    /// Number of bytes covered by loss spans.
    pub fn loss_len(&self) -> usize {
        self.loss_spans.iter().map(Span::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Loss on the final example's target only.
    Standard,
    /// Loss from the first demonstration's target to the end of the sequence.
    Suffix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaIclConfig {
    pub zipf_a: f64,
    pub cap_k: usize,
    pub separator: String,
    pub loss_variant: LossVariant,
    pub inference_separator: String,
}

impl Default for MetaIclConfig {
    fn default() -> Self {
        MetaIclConfig {
            zipf_a: 4.0,
            cap_k: 5,
            separator: TRAIN_SEPARATOR.into(),
            loss_variant: LossVariant::Standard,
            inference_separator: INFERENCE_SEPARATOR.into(),
        }
    }
}

impl MetaIclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zipf_a > 1.0) || !self.zipf_a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "zipf shape must be > 1, got {}",
                self.zipf_a
            )));
        }
        if self.cap_k == 0 {
            return Err(Error::InvalidArgument("cap_k must be at least 1".into()));
        }
        if self.separator.is_empty() {
            return Err(Error::InvalidArgument("demonstration separator is empty".into()));
        }
        Ok(())
    }
}

fn field_value<'r>(record: &'r RawRecord, name: &str, template_id: &str) -> Result<std::borrow::Cow<'r, str>> {
    Ok(match name {
        "source" => record.source.as_str().into(),
        "target" => record.target.as_str().into(),
        "record_id" => record.record_id.as_str().into(),
        "candidates" => match &record.candidates {
            Some(c) => c.join(", ").into(),
            None => {
                return Err(Error::UnresolvedPlaceholder {
                    template_id: template_id.into(),
                    placeholder: name.into(),
                })
            }
        },
        _ => {
            return Err(Error::UnresolvedPlaceholder {
                template_id: template_id.into(),
                placeholder: name.into(),
            })
        }
    })
}

/// Substitutes `{field}` placeholders. `{{` and `}}` are literal braces.
pub fn instantiate(text: &str, record: &RawRecord, template_id: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len() + record.source.len());
    let mut rest = text;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('{') {
            let close = tail.find('}').ok_or_else(|| Error::UnresolvedPlaceholder {
                template_id: template_id.into(),
                placeholder: tail.chars().take(16).collect(),
            })?;
            let name = &tail[1..close];
            out.push_str(&field_value(record, name, template_id)?);
            rest = &tail[close + 1..];
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

struct Pieces {
    header: Option<String>,
    source: String,
    target: String,
}

/// Applies the delimiter rule: a delimiter is appended unless the text ends with ':'.
pub fn with_delimiter(mut instructions: String, delimiter: &str) -> String {
    if !instructions.ends_with(':') {
        instructions.push_str(delimiter);
    }
    instructions
}

fn pieces(format: PromptFormat<'_>, record: &RawRecord, delimiter: &str) -> Result<Pieces> {
    match format {
        PromptFormat::Raw => Ok(Pieces {
            header: None,
            source: record.source.clone(),
            target: record.target.clone(),
        }),
        PromptFormat::Template(t) => {
            let target = field_value(record, &t.output_field, &t.template_id)?.into_owned();
            let (header, body) = match t.instruction_style {
                TemplateStyle::TaskLevel => {
                    let input = t.input_text.as_deref().unwrap_or("{source}");
                    (
                        Some(instantiate(&t.instruction_text, record, &t.template_id)?),
                        instantiate(input, record, &t.template_id)?,
                    )
                }
                TemplateStyle::InstanceLevel => (None, instantiate(&t.instruction_text, record, &t.template_id)?),
            };
            Ok(Pieces {
                header: header.filter(|h| !h.is_empty()),
                source: with_delimiter(body, delimiter),
                target,
            })
        }
    }
}

/// Byte layout of one demonstration inside a rendered prompt.
#[derive(Debug, Clone, Copy)]
struct DemoLayout {
    start: usize,
    target: Span,
}

struct Layout {
    example: RenderedExample,
    demos: Vec<DemoLayout>,
    /// Offset where the final (target) example's text begins.
    final_start: usize,
}

fn render_inner(
    task_id: &str,
    format: PromptFormat<'_>,
    record: &RawRecord,
    demos: &[&RawRecord],
    delimiters: &DelimiterSet,
    separator: &str,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Layout> {
    for d in demos {
        if d.record_id == record.record_id {
            return Err(Error::InvalidArgument(format!(
                "record `{}` used as its own demonstration",
                record.record_id
            )));
        }
    }
    // One delimiter per prompt, shared by its demonstrations and target example.
    let delimiter = delimiters.get(delimiters.sample_index(rng));
    let main = pieces(format, record, delimiter)?;

    let mut text = String::new();
    if let Some(h) = &main.header {
        text.push_str(h);
        text.push_str(HEADER_JOINER);
    }
    let mut layouts = Vec::with_capacity(demos.len());
    for demo in demos {
        let p = pieces(format, demo, delimiter)?;
        let start = text.len();
        text.push_str(&p.source);
        let t0 = text.len();
        text.push_str(&p.target);
        layouts.push(DemoLayout {
            start,
            target: Span::new(t0, text.len()),
        });
        text.push_str(separator);
    }
    let final_start = text.len();
    text.push_str(&main.source);
    let tstart = text.len();
    let loss_spans = if main.target.is_empty() {
        Vec::new()
    } else {
        vec![Span::new(tstart, tstart + main.target.len())]
    };
    Ok(Layout {
        example: RenderedExample {
            source_text: text,
            target_text: main.target,
            loss_spans,
            shots: demos.len(),
            provenance: Provenance {
                task_id: task_id.into(),
                record_id: record.record_id.clone(),
                template_id: format.template_id().map(str::to_owned),
            },
            demo_record_ids: demos.iter().map(|d| d.record_id.clone()).collect(),
        },
        demos: layouts,
        final_start,
    })
}

/// Renders `record` with no demonstrations.
pub fn render_zero_shot(
    task_id: &str,
    record: &RawRecord,
    template: &PromptTemplate,
    delimiters: &DelimiterSet,
    rng: &mut (impl Rng + ?Sized),
) -> Result<RenderedExample> {
    render_zero_shot_format(record, PromptFormat::Template(template), delimiters, task_id, rng)
}

pub fn render_zero_shot_format(
    record: &RawRecord,
    format: PromptFormat<'_>,
    delimiters: &DelimiterSet,
    task_id: &str,
    rng: &mut (impl Rng + ?Sized),
) -> Result<RenderedExample> {
    Ok(render_inner(task_id, format, record, &[], delimiters, "", rng)?.example)
}

/// Renders `record` preceded by fully rendered demonstrations.
///
/// Task-level templates place the demonstrations between the instruction and
/// the example; instance-level templates place them before the example.
pub fn render_few_shot(
    task_id: &str,
    record: &RawRecord,
    demos: &[&RawRecord],
    format: PromptFormat<'_>,
    delimiters: &DelimiterSet,
    separator: &str,
    rng: &mut (impl Rng + ?Sized),
) -> Result<RenderedExample> {
    Ok(render_inner(task_id, format, record, demos, delimiters, separator, rng)?.example)
}

/// Probability of each demonstration count `0..=cap_k`.
///
/// `k` follows a Zipf law `P(k) ∝ k^-a` truncated to `1..=cap_k + 1`, and the
/// number of demonstrations is `k - 1`.
pub fn demo_count_pmf(zipf_a: f64, cap_k: usize) -> Vec<f64> {
    let weights: Vec<f64> = (1..=cap_k + 1).map(|k| (k as f64).powf(-zipf_a)).collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

/// Sampler for the number of demonstrations in a training example.
#[derive(Debug, Clone)]
pub struct DemoCountSampler {
    dist: WeightedIndex<f64>,
}

impl DemoCountSampler {
    pub fn new(cfg: &MetaIclConfig) -> Result<Self> {
        cfg.validate()?;
        let dist = WeightedIndex::new(demo_count_pmf(cfg.zipf_a, cfg.cap_k))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(DemoCountSampler { dist })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

pub fn sample_num_demos<R: Rng + ?Sized>(cfg: &MetaIclConfig, rng: &mut R) -> Result<usize> {
    Ok(DemoCountSampler::new(cfg)?.sample(rng))
}

/// Builds one MetaICL training example: a sampled number of demonstrations
/// drawn without replacement from `pool`, joined by `cfg.separator`.
pub fn build_metaicl_example(
    task_id: &str,
    record: &RawRecord,
    pool: &[&RawRecord],
    format: PromptFormat<'_>,
    cfg: &MetaIclConfig,
    delimiters: &DelimiterSet,
    rng: &mut (impl Rng + ?Sized),
) -> Result<RenderedExample> {
    let sampler = DemoCountSampler::new(cfg)?;
    build_metaicl_with(task_id, record, pool, format, cfg, &sampler, delimiters, rng)
}

#[allow(clippy::too_many_arguments)]
pub fn build_metaicl_with(
    task_id: &str,
    record: &RawRecord,
    pool: &[&RawRecord],
    format: PromptFormat<'_>,
    cfg: &MetaIclConfig,
    sampler: &DemoCountSampler,
    delimiters: &DelimiterSet,
    rng: &mut (impl Rng + ?Sized),
) -> Result<RenderedExample> {
    if pool.len() < cfg.cap_k {
        return Err(Error::InvalidArgument(format!(
            "demonstration pool has {} examples, need at least {}",
            pool.len(),
            cfg.cap_k
        )));
    }
    if pool.iter().any(|p| p.record_id == record.record_id) {
        return Err(Error::InvalidArgument(format!(
            "demonstration pool contains the example `{}` itself",
            record.record_id
        )));
    }
    let d = sampler.sample(rng);
    let demos: Vec<&RawRecord> = index::sample(rng, pool.len(), d).into_iter().map(|i| pool[i]).collect();
    let layout = render_inner(task_id, format, record, &demos, delimiters, &cfg.separator, rng)?;
    let mut example = layout.example;
    if cfg.loss_variant == LossVariant::Suffix && d > 0 {
        let end = example.source_text.len() + example.target_text.len();
        let rest_start = layout.demos.get(1).map_or(layout.final_start, |l| l.start);
        let mut spans = Vec::with_capacity(2);
        if !layout.demos[0].target.is_empty() {
            spans.push(layout.demos[0].target);
        }
        spans.push(Span::new(rest_start, end));
        example.loss_spans = spans;
    }
    Ok(example)
}

/// Pairs each record of `task` with one of its prompt formats.
///
/// Records pinned to a template through `template_id` keep it; all others get
/// a uniformly chosen format. Returns `(record index, format index)` pairs in
/// record order, one per record.
pub fn merge_prompts(task: &Task, seed: u64) -> Result<Vec<(usize, usize)>> {
    let n_formats = task.formats().len();
    let mut rng = derive_rng(seed, &format!("merge/{}", task.key()));
    let choices = assign_formats(task.records.len(), n_formats, &mut rng)?;
    task.records
        .iter()
        .zip(choices)
        .enumerate()
        .map(|(i, (r, choice))| {
            let fi = match &r.template_id {
                Some(id) => task.template_index(id).ok_or_else(|| {
                    Error::Validation(format!(
                        "record `{}` of task `{}` pins unknown template `{id}`",
                        r.record_id,
                        task.key()
                    ))
                })?,
                None => choice,
            };
            Ok((i, fi))
        })
        .collect()
}

/// Uniform format choice for `n` examples over `n_formats` formats.
pub fn assign_formats<R: Rng + ?Sized>(n: usize, n_formats: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n_formats == 0 {
        return Err(Error::InvalidArgument("task has no prompt templates".into()));
    }
    Ok((0..n).map(|_| rng.random_range(0..n_formats)).collect())
}
