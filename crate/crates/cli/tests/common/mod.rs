#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Output;

use clap::Parser;
use instructmix_cli::{run, Cli, Failure, Outcome};
use serde_json::{json, Value};

pub const BENCHMARKS: [&str; 7] = ["crossfit", "exmix", "flan", "niv2", "promptsource", "t5", "uskg"];

pub fn run_args(args: &[&str]) -> Result<Outcome, Failure> {
    let mut argv = vec!["instructmix"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).expect("valid command line"))
}

pub fn run_bin(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_instructmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn write_records(path: &Path, records: &[Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

pub fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Two train tasks per benchmark with distinct sizes, plus `eval_tasks`
/// held-out test tasks under `niv2`. Returns the manifest path.
pub fn seven_benchmark_corpus(dir: &Path, eval_tasks: usize) -> PathBuf {
    let mut tasks = Vec::new();
    for (bi, b) in BENCHMARKS.iter().enumerate() {
        for t in 0..2 {
            let id = format!("{b}_t{t}");
            let n = 20 + 15 * t + bi;
            let recs: Vec<Value> = (0..n)
                .map(|i| json!({"record_id": i.to_string(), "source": format!("question {i} about {id}"), "target": format!("answer {i}")}))
                .collect();
            write_records(&dir.join(format!("{id}.jsonl")), &recs);
            tasks.push(json!({
                "task_id": id, "benchmark": b, "category": format!("cat{}", bi % 3),
                "records_path": format!("{id}.jsonl"),
                "templates": [
                    {"template_id": "p0", "instruction_style": "instance_level", "instruction_text": "Q: {source}"},
                    {"template_id": "p1", "instruction_style": "instance_level", "instruction_text": "Answer the question:\n{source}"}
                ]
            }));
        }
    }
    for k in 0..eval_tasks {
        let id = format!("held{k}");
        let recs: Vec<Value> = (0..12)
            .map(|i| json!({"record_id": i.to_string(), "source": format!("eval item {i} of {id}"), "target": format!("gold {i}")}))
            .collect();
        write_records(&dir.join(format!("{id}.jsonl")), &recs);
        tasks.push(json!({
            "task_id": id, "benchmark": "niv2", "category": "heldcat", "records_path": format!("{id}.jsonl"),
            "split": "test", "metric": "exact_match",
            "templates": [{"template_id": "p0", "instruction_style": "instance_level", "instruction_text": "Solve: {source}"}]
        }));
    }
    let benchmarks: Vec<Value> = BENCHMARKS
        .iter()
        .map(|b| json!({"name": b, "instruction_style": "instance_level"}))
        .collect();
    let manifest = dir.join("manifest.json");
    write_json(&manifest, &json!({"benchmarks": benchmarks, "tasks": tasks}));
    write_json(&dir.join("plan.json"), &json!({"held_out_categories": ["heldcat"]}));
    manifest
}

/// Three eval tasks covering a task-level template, an instance-level
/// template whose instruction ends in ':' and a task with two templates.
pub fn scripted_eval_corpus(dir: &Path) -> PathBuf {
    let rec = |id: &str, i: usize, tgt: String| json!({"record_id": format!("{id}-{i}"), "source": format!("{id} input number {i}"), "target": tgt});
    let t1: Vec<Value> = (0..10).map(|i| rec("summ", i, format!("summary {i}"))).collect();
    let t2: Vec<Value> = (0..10).map(|i| rec("qa", i, format!("Reply {}", i * 7))).collect();
    let t3: Vec<Value> = (0..10)
        .map(|i| rec("nli", i, if i % 2 == 0 { "yes".into() } else { "no".into() }))
        .collect();
    write_records(&dir.join("summ.jsonl"), &t1);
    write_records(&dir.join("qa.jsonl"), &t2);
    write_records(&dir.join("nli.jsonl"), &t3);
    let manifest = dir.join("eval_manifest.json");
    write_json(
        &manifest,
        &json!({
            "benchmarks": [
                {"name": "niv2", "instruction_style": "task_level"},
                {"name": "flan", "instruction_style": "instance_level"}
            ],
            "tasks": [
                {"task_id": "summ", "benchmark": "niv2", "category": "summarization", "records_path": "summ.jsonl",
                 "split": "test", "metric": "exact_match",
                 "templates": [{"template_id": "d", "instruction_style": "task_level",
                                "instruction_text": "Summarize the passage.", "input_text": "Passage: {source}"}]},
                {"task_id": "qa", "benchmark": "flan", "category": "qa", "records_path": "qa.jsonl",
                 "split": "test", "metric": "exact_match",
                 "templates": [{"template_id": "q", "instruction_style": "instance_level",
                                "instruction_text": "Question: {source}\nAnswer:"}]},
                {"task_id": "nli", "benchmark": "flan", "category": "nli", "records_path": "nli.jsonl",
                 "split": "test", "metric": "exact_match",
                 "templates": [
                    {"template_id": "a", "instruction_style": "instance_level", "instruction_text": "Does it follow? {source}"},
                    {"template_id": "b", "instruction_style": "instance_level", "instruction_text": "{source}\nTrue or false"}
                 ]}
            ]
        }),
    );
    manifest
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}
