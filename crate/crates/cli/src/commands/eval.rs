use std::fs;
use std::path::Path;

use instructmix::eval::{
    aggregate, echo_for_prompts, plan_registry, score_prompts, EvalPrompt, EvalSettings, Scorer, UniformScorer,
    UnigramScorer, DEFAULT_MAX_GEN_TOKENS, DEFAULT_MAX_PROMPTS, DEFAULT_SHOTS,
};
use instructmix::prompting::INFERENCE_SEPARATOR;
use instructmix::tokenizer::tokenizer_from_spec;
use instructmix::Tokenizer;
use serde::Serialize;

use super::{load_registry, Context};
use crate::args::EvalArgs;
use crate::config::pick;
use crate::output::RunManifest;
use crate::{Failure, Outcome};

pub const REPORT_FILE: &str = "report.json";
pub const LEAVES_FILE: &str = "leaves.jsonl";

#[derive(Debug, Serialize)]
struct EvalRunSettings {
    scorer: String,
    tokenizer: String,
    eval: EvalSettings,
}

pub fn parse_shots(s: &str) -> Result<Vec<usize>, Failure> {
    let shots = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Failure::input(format!("bad shot count {p:?} in {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if shots.is_empty() {
        return Err(Failure::input("empty shot list"));
    }
    Ok(shots)
}

fn build_scorer(spec: &str, prompts: &[EvalPrompt], tokenizer: &dyn Tokenizer) -> Result<Box<dyn Scorer>, Failure> {
    match spec.split_once(':') {
        None if spec == "uniform" => Ok(Box::new(UniformScorer::new(tokenizer.vocab_size(), tokenizer.eos_id()))),
        None if spec == "echo" => Ok(Box::new(echo_for_prompts(prompts, tokenizer)?)),
        Some(("unigram", path)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{path}: {e}")))?;
            let probs: Vec<f64> = serde_json::from_str(&text).map_err(|e| Failure::input(format!("{path}: {e}")))?;
            if probs.len() != tokenizer.vocab_size() {
                return Err(Failure::input(format!(
                    "{path}: {} probabilities for a vocabulary of {}",
                    probs.len(),
                    tokenizer.vocab_size()
                )));
            }
            Ok(Box::new(UnigramScorer::new(probs, tokenizer.eos_id())?))
        }
        _ => Err(Failure::input(format!(
            "unknown scorer `{spec}` (uniform, unigram:<path>, echo)"
        ))),
    }
}

pub fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<Outcome, Failure> {
    let seed = ctx.seed("eval")?;
    let shots = match &args.shots {
        Some(s) => parse_shots(s)?,
        None => ctx.file.shots.clone().unwrap_or_else(|| DEFAULT_SHOTS.to_vec()),
    };
    let max_prompts = if args.all_prompts {
        None
    } else {
        Some(pick(args.max_prompts, ctx.file.max_prompts, DEFAULT_MAX_PROMPTS))
    };
    if max_prompts == Some(0) {
        return Err(Failure::input("--max-prompts must be positive"));
    }
    let settings = EvalSettings {
        shots,
        max_prompts,
        max_gen_tokens: pick(args.max_gen_tokens, ctx.file.max_gen_tokens, DEFAULT_MAX_GEN_TOKENS),
        separator: INFERENCE_SEPARATOR.into(),
        seed,
    };
    let scorer_spec = pick(args.scorer.clone(), ctx.file.scorer.clone(), "uniform".to_string());
    let tokenizer = tokenizer_from_spec(&ctx.tokenizer_spec(&args.tokenizer))?;

    let mut out = ctx.out_dir("eval")?;
    let (registry, reg_path) = load_registry(&args.registry)?;
    let prompts = plan_registry(&registry, &settings)?;
    let scorer = build_scorer(&scorer_spec, &prompts, tokenizer.as_ref())?;
    let leaves = score_prompts(&prompts, scorer.as_ref(), tokenizer.as_ref(), settings.max_gen_tokens)?;
    let report = aggregate(&leaves)?;

    out.write_json(REPORT_FILE, &report)?;
    let mut buf = Vec::new();
    for l in &report.leaves {
        serde_json::to_writer(&mut buf, l).map_err(|e| Failure::internal(e.to_string()))?;
        buf.push(b'\n');
    }
    out.write(LEAVES_FILE, &buf)?;
    let text = report.render_text();
    out.write("report.txt", text.as_bytes())?;

    let run_settings = EvalRunSettings {
        scorer: scorer_spec.clone(),
        tokenizer: tokenizer.name().to_string(),
        eval: settings,
    };
    let mut run = RunManifest::new("eval", ctx.workers, &run_settings).input(&reg_path)?;
    if let Some(path) = scorer_spec.strip_prefix("unigram:") {
        run = run.input(Path::new(path))?;
    }
    let dir = out.finish(run)?;
    Ok(Outcome {
        message: format!("{} prompts scored\n{text}", prompts.len()),
        out_dir: Some(dir),
    })
}
