//! Evaluation: rank classification, greedy generation, metrics, validation
//! sampling and the hierarchical aggregation used for model selection.

mod metrics;
mod scorer;

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{exact_match, lcs_len, normalize_answer, rouge_l_f1, rouge_l_pair, Metric};
pub use scorer::{EchoScorer, Scorer, UniformScorer, UnigramScorer};

use crate::corpus::{Registry, Task};
use crate::error::{Error, Result};
use crate::prompting::{self, DelimiterSet, RenderedExample, INFERENCE_SEPARATOR};
use crate::seed::derive_rng;
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_MAX_GEN_TOKENS: usize = 256;
pub const DEFAULT_MAX_PROMPTS: usize = 250;
pub const DEFAULT_SHOTS: [usize; 2] = [0, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTaskConfig {
    pub metric: Metric,
    pub shots: usize,
    pub max_gen_tokens: usize,
    pub has_candidates: bool,
}

impl EvalTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.metric == Metric::Accuracy && !self.has_candidates {
            return Err(Error::Validation("accuracy requires answer candidates".into()));
        }
        if self.max_gen_tokens == 0 {
            return Err(Error::Validation("max_gen_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the highest-scoring candidate; the first one wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= *s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Chooses the candidate with the largest summed log-probability.
pub fn rank_classify(context: &[TokenId], candidates: &[Vec<TokenId>], scorer: &dyn Scorer) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates to rank".into()));
    }
    let scores: Vec<f64> = candidates.iter().map(|c| scorer.logprob(context, c)).collect();
    Ok(argmax_first(&scores).expect("non-empty"))
}

/// Greedy decoding until `<eos>` (not returned) or `max_tokens`.
pub fn greedy_generate(context: &[TokenId], scorer: &dyn Scorer, max_tokens: usize) -> Vec<TokenId> {
    let eos = scorer.eos_id();
    let mut ctx = context.to_vec();
    let start = ctx.len();
    while ctx.len() - start < max_tokens {
        let next = scorer.greedy_step(&ctx);
        if next == eos {
            break;
        }
        ctx.push(next);
    }
    ctx.split_off(start)
}

/// Up to `max_prompts` indices of a pool of `pool_len`, uniform without
/// replacement, returned in ascending order.
pub fn sample_validation(pool_len: usize, max_prompts: usize, seed: u64, label: &str) -> Result<Vec<usize>> {
    if pool_len == 0 {
        return Err(Error::InvalidArgument(format!("prompt pool of `{label}` is empty")));
    }
    if pool_len <= max_prompts {
        return Ok((0..pool_len).collect());
    }
    let mut rng = derive_rng(seed, &format!("validation/{label}"));
    let mut picked = index::sample(&mut rng, pool_len, max_prompts).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub shots: Vec<usize>,
    /// `None` keeps every prompt.
    pub max_prompts: Option<usize>,
    pub max_gen_tokens: usize,
    pub separator: String,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            shots: DEFAULT_SHOTS.to_vec(),
            max_prompts: Some(DEFAULT_MAX_PROMPTS),
            max_gen_tokens: DEFAULT_MAX_GEN_TOKENS,
            separator: INFERENCE_SEPARATOR.into(),
            seed: 0,
        }
    }
}

/// One rendered evaluation prompt with what is needed to score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPrompt {
    pub benchmark: String,
    pub category: String,
    pub task: String,
    pub subtask: String,
    pub template: Option<String>,
    pub metric: Metric,
    pub rendered: RenderedExample,
    pub candidates: Option<Vec<String>>,
    pub references: Vec<String>,
}

fn task_metric(task: &Task) -> Metric {
    task.spec.metric.unwrap_or_else(|| {
        if !task.records.is_empty() && task.records.iter().all(|r| r.candidates.is_some()) {
            Metric::Accuracy
        } else {
            Metric::RougeLF1
        }
    })
}

/// Renders the evaluation prompts of one task for every shot count.
///
/// Prompts are the task's merged prompt pool, subsampled to
/// `settings.max_prompts`. Demonstrations are other records of the same task.
pub fn plan_task(task: &Task, settings: &EvalSettings) -> Result<Vec<EvalPrompt>> {
    let key = task.key();
    let metric = task_metric(task);
    let has_candidates = task.records.iter().all(|r| r.candidates.is_some());
    let delims = DelimiterSet::default();
    let formats = task.formats();
    let pairs = prompting::merge_prompts(task, settings.seed)?;
    let chosen = match settings.max_prompts {
        Some(max) => sample_validation(pairs.len(), max, settings.seed, &key.to_string())?,
        None => (0..pairs.len()).collect(),
    };
    let mut out = Vec::with_capacity(chosen.len() * settings.shots.len());
    for &shots in &settings.shots {
        EvalTaskConfig {
            metric,
            shots,
            max_gen_tokens: settings.max_gen_tokens,
            has_candidates,
        }
        .validate()
        .map_err(|e| Error::Validation(format!("task `{key}`: {e}")))?;
        let available = task.records.len().saturating_sub(1);
        if shots > available {
            log::warn!("task `{key}`: {shots}-shot requested, only {available} demonstrations available");
        }
        for &pi in &chosen {
            let (ri, fi) = pairs[pi];
            let record = &task.records[ri];
            let label = format!("eval/{key}/{}/{shots}", record.record_id);
            let mut rng = derive_rng(settings.seed, &label);
            let others: Vec<usize> = (0..task.records.len()).filter(|&i| i != ri).collect();
            let k = shots.min(others.len());
            let demos: Vec<_> = index::sample(&mut rng, others.len(), k)
                .into_iter()
                .map(|i| &task.records[others[i]])
                .collect();
            let rendered = prompting::render_few_shot(
                &task.spec.task_id,
                record,
                &demos,
                formats[fi],
                &delims,
                &settings.separator,
                &mut rng,
            )?;
            out.push(EvalPrompt {
                benchmark: task.spec.benchmark.clone(),
                category: task.spec.category.clone(),
                task: task.spec.task_id.clone(),
                subtask: task.spec.subtask.clone().unwrap_or_else(|| task.spec.task_id.clone()),
                template: formats[fi].template_id().map(str::to_owned),
                metric,
                candidates: record.candidates.clone(),
                references: vec![record.target.clone()],
                rendered: RenderedExample { shots, ..rendered },
            });
        }
    }
    Ok(out)
}

/// Evaluation prompts of every eval task in the registry.
pub fn plan_registry(registry: &Registry, settings: &EvalSettings) -> Result<Vec<EvalPrompt>> {
    let mut out = Vec::new();
    for task in registry.eval_tasks() {
        out.extend(plan_task(task, settings)?);
    }
    Ok(out)
}

/// Keyed echo scorer answering every planned prompt with its reference.
pub fn echo_for_prompts(prompts: &[EvalPrompt], tokenizer: &dyn Tokenizer) -> Result<EchoScorer> {
    let mut echo = EchoScorer::keyed(tokenizer.vocab_size(), tokenizer.eos_id());
    for p in prompts {
        echo.insert(
            tokenizer.encode(&p.rendered.source_text)?,
            tokenizer.encode(&p.references[0])?,
        );
    }
    Ok(echo)
}

/// Score of a single prompt in `[0, 1]`.
pub fn score_prompt(
    prompt: &EvalPrompt,
    scorer: &dyn Scorer,
    tokenizer: &dyn Tokenizer,
    max_gen_tokens: usize,
) -> Result<f64> {
    let context = tokenizer.encode(&prompt.rendered.source_text)?;
    match prompt.metric {
        Metric::Accuracy => {
            let cands = prompt
                .candidates
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("task `{}`: accuracy needs candidates", prompt.task)))?;
            let encoded = cands.iter().map(|c| tokenizer.encode(c)).collect::<Result<Vec<_>>>()?;
            let pick = rank_classify(&context, &encoded, scorer)?;
            Ok(if prompt.references.contains(&cands[pick]) {
                1.0
            } else {
                0.0
            })
        }
        metric => {
            let generated = greedy_generate(&context, scorer, max_gen_tokens);
            let hyp = tokenizer.decode_lossy(&generated);
            Ok(match metric {
                Metric::ExactMatch => exact_match(&hyp, &prompt.references),
                _ => rouge_l_f1(&hyp, &prompt.references),
            })
        }
    }
}

/// Scores every prompt and averages them into per-(task, template, shots) leaves.
pub fn score_prompts(
    prompts: &[EvalPrompt],
    scorer: &dyn Scorer,
    tokenizer: &dyn Tokenizer,
    max_gen_tokens: usize,
) -> Result<Vec<LeafScore>> {
    let run = |p: &EvalPrompt| score_prompt(p, scorer, tokenizer, max_gen_tokens);
    let scores: Vec<f64> = if scorer.supports_concurrency() {
        prompts.par_iter().map(run).collect::<Result<_>>()?
    } else {
        prompts.iter().map(run).collect::<Result<_>>()?
    };
    type LeafKey = (String, String, String, Option<String>, usize);
    let mut groups: BTreeMap<LeafKey, (&EvalPrompt, Vec<f64>)> = BTreeMap::new();
    for (p, s) in prompts.iter().zip(scores) {
        let key = (
            p.benchmark.clone(),
            p.task.clone(),
            p.subtask.clone(),
            p.template.clone(),
            p.rendered.shots,
        );
        groups.entry(key).or_insert_with(|| (p, Vec::new())).1.push(s);
    }
    Ok(groups
        .into_values()
        .map(|(p, s)| LeafScore {
            benchmark: p.benchmark.clone(),
            category: p.category.clone(),
            task: p.task.clone(),
            subtask: p.subtask.clone(),
            template: p.template.clone(),
            shots: p.rendered.shots,
            metric: p.metric,
            score: mean(&s),
            count: s.len(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafScore {
    pub benchmark: String,
    pub category: String,
    pub task: String,
    pub subtask: String,
    #[serde(default)]
    pub template: Option<String>,
    pub shots: usize,
    pub metric: Metric,
    pub score: f64,
    #[serde(default)]
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScore {
    pub benchmark: String,
    pub task: String,
    pub subtask: String,
    pub shots: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub benchmark: String,
    pub task: String,
    pub shots: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedTaskScore {
    pub task: String,
    pub category: String,
    pub shots: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub name: String,
    pub shots: usize,
    pub score: f64,
}

/// Aggregation tree: leaves → subtasks → tasks per benchmark → tasks merged
/// across benchmarks → categories → combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub leaves: Vec<LeafScore>,
    pub subtasks: Vec<SubtaskScore>,
    pub tasks: Vec<TaskScore>,
    pub merged_tasks: Vec<MergedTaskScore>,
    pub categories: Vec<GroupScore>,
    pub benchmarks: Vec<GroupScore>,
    /// Mean of every category score over all shot settings.
    pub combined: Option<f64>,
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn grouped<K: Ord, T>(items: impl IntoIterator<Item = (K, T)>) -> BTreeMap<K, Vec<T>> {
    let mut m: BTreeMap<K, Vec<T>> = BTreeMap::new();
    for (k, v) in items {
        m.entry(k).or_default().push(v);
    }
    m
}

pub fn aggregate(leaves: &[LeafScore]) -> Result<EvalReport> {
    let mut task_category: BTreeMap<&str, &str> = BTreeMap::new();
    for l in leaves {
        for (field, v) in [
            ("task", &l.task),
            ("benchmark", &l.benchmark),
            ("category", &l.category),
            ("subtask", &l.subtask),
        ] {
            if v.is_empty() {
                return Err(Error::Validation(format!("leaf is missing its {field}: {l:?}")));
            }
        }
        if !l.score.is_finite() {
            return Err(Error::Validation(format!("leaf score is not finite: {l:?}")));
        }
        if let Some(prev) = task_category.insert(&l.task, &l.category) {
            if prev != l.category {
                return Err(Error::Validation(format!(
                    "task `{}` appears in categories `{prev}` and `{}`",
                    l.task, l.category
                )));
            }
        }
    }

    let subtasks: Vec<SubtaskScore> = grouped(leaves.iter().map(|l| {
        (
            (l.benchmark.clone(), l.task.clone(), l.subtask.clone(), l.shots),
            l.score,
        )
    }))
    .into_iter()
    .map(|((benchmark, task, subtask, shots), s)| SubtaskScore {
        benchmark,
        task,
        subtask,
        shots,
        score: mean(&s),
    })
    .collect();

    let tasks: Vec<TaskScore> = grouped(
        subtasks
            .iter()
            .map(|s| ((s.benchmark.clone(), s.task.clone(), s.shots), s.score)),
    )
    .into_iter()
    .map(|((benchmark, task, shots), s)| TaskScore {
        benchmark,
        task,
        shots,
        score: mean(&s),
    })
    .collect();

    let merged_tasks: Vec<MergedTaskScore> = grouped(tasks.iter().map(|t| ((t.task.clone(), t.shots), t.score)))
        .into_iter()
        .map(|((task, shots), s)| MergedTaskScore {
            category: task_category[task.as_str()].to_string(),
            task,
            shots,
            score: mean(&s),
        })
        .collect();

    let categories: Vec<GroupScore> = grouped(merged_tasks.iter().map(|t| ((t.category.clone(), t.shots), t.score)))
        .into_iter()
        .map(|((name, shots), s)| GroupScore {
            name,
            shots,
            score: mean(&s),
        })
        .collect();

    let benchmarks: Vec<GroupScore> = grouped(tasks.iter().map(|t| ((t.benchmark.clone(), t.shots), t.score)))
        .into_iter()
        .map(|((name, shots), s)| GroupScore {
            name,
            shots,
            score: mean(&s),
        })
        .collect();

    let combined = if categories.is_empty() {
        None
    } else {
        Some(mean(&categories.iter().map(|c| c.score).collect::<Vec<_>>()))
    };

    let mut leaves = leaves.to_vec();
    leaves.sort_by(|a, b| {
        (&a.benchmark, &a.task, &a.subtask, &a.template, a.shots)
            .cmp(&(&b.benchmark, &b.task, &b.subtask, &b.template, b.shots))
            .then(a.score.total_cmp(&b.score))
    });
    Ok(EvalReport {
        leaves,
        subtasks,
        tasks,
        merged_tasks,
        categories,
        benchmarks,
        combined,
    })
}

impl EvalReport {
    /// Plain-text summary of the category, benchmark and combined levels.
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "{:<32} {:>6} {:>8}", "category", "shots", "score");
        for c in &self.categories {
            let _ = writeln!(s, "{:<32} {:>6} {:>8.4}", c.name, c.shots, c.score);
        }
        let _ = writeln!(s, "\n{:<32} {:>6} {:>8}", "benchmark", "shots", "score");
        for b in &self.benchmarks {
            let _ = writeln!(s, "{:<32} {:>6} {:>8.4}", b.name, b.shots, b.score);
        }
        match self.combined {
            Some(c) => {
                let _ = writeln!(s, "\ncombined {c:.4}");
            }
            None => s.push_str("\ncombined n/a\n"),
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(cat: &str, bench: &str, task: &str, shots: usize, score: f64) -> LeafScore {
        LeafScore {
            benchmark: bench.into(),
            category: cat.into(),
            task: task.into(),
            subtask: task.into(),
            template: None,
            shots,
            metric: Metric::RougeLF1,
            score,
            count: 1,
        }
    }

    #[test]
    fn argmax_ties_and_shift() {
        assert_eq!(argmax_first(&[-3.2, -1.1]), Some(1));
        assert_eq!(argmax_first(&[-2.0, -2.0, -2.0]), Some(0));
        assert_eq!(argmax_first(&[-3.2 + 7.0, -1.1 + 7.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn rank_classify_empty() {
        let s = UniformScorer::new(4, 3);
        assert!(rank_classify(&[1], &[], &s).is_err());
    }

    #[test]
    fn greedy_limits() {
        let eos_now = EchoScorer::new(8, 7, vec![]);
        assert!(greedy_generate(&[1], &eos_now, 256).is_empty());
        let never = UnigramScorer::new(vec![0.0, 1.0, 0.0], 2).unwrap();
        let g = greedy_generate(&[0], &never, 256);
        assert_eq!(g.len(), 256);
        assert_eq!(g, greedy_generate(&[0], &never, 256));
    }

    #[test]
    fn validation_sampling() {
        assert_eq!(sample_validation(100, 250, 1, "t").unwrap().len(), 100);
        let a = sample_validation(1000, 250, 1, "t").unwrap();
        assert_eq!(a.len(), 250);
        assert_eq!(a, sample_validation(1000, 250, 1, "t").unwrap());
        assert!(sample_validation(0, 250, 1, "t").is_err());
    }

    #[test]
    fn category_means() {
        let leaves = vec![
            leaf("c", "b", "t1", 0, 60.0),
            leaf("c", "b", "t2", 0, 40.0),
            leaf("c", "b", "t1", 5, 70.0),
            leaf("c", "b", "t2", 5, 50.0),
        ];
        let r = aggregate(&leaves).unwrap();
        assert_eq!(r.categories[0].score, 50.0);
        assert_eq!(r.categories[1].score, 60.0);
        assert_eq!(r.combined, Some(55.0));
    }

    #[test]
    fn cross_benchmark_merge() {
        let r = aggregate(&[leaf("c", "b1", "t", 0, 80.0), leaf("c", "b2", "t", 0, 60.0)]).unwrap();
        assert_eq!(r.merged_tasks[0].score, 70.0);
        assert_eq!(r.tasks.len(), 2);
    }

    #[test]
    fn singleton() {
        let r = aggregate(&[leaf("c", "b", "t", 0, 0.3)]).unwrap();
        assert_eq!(r.subtasks[0].score, 0.3);
        assert_eq!(r.tasks[0].score, 0.3);
        assert_eq!(r.categories[0].score, 0.3);
        assert_eq!(r.combined, Some(0.3));
    }

    #[test]
    fn missing_metadata_rejected() {
        assert!(aggregate(&[leaf("", "b", "t", 0, 1.0)]).is_err());
        assert!(aggregate(&[leaf("c1", "b", "t", 0, 1.0), leaf("c2", "b", "t", 5, 1.0)]).is_err());
    }

    #[test]
    fn accuracy_requires_candidates() {
        let cfg = EvalTaskConfig {
            metric: Metric::Accuracy,
            shots: 0,
            max_gen_tokens: 256,
            has_candidates: false,
        };
        assert!(cfg.validate().is_err());
    }
}
