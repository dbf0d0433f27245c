mod common;

use std::fs;

use common::*;
use instructmix::packing::read_shard;
use instructmix::Registry;
use instructmix_cli::Failure;
use serde_json::json;

#[test]
fn ingest_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let recs: Vec<_> = (0..4)
        .map(|i| json!({"record_id": i.to_string(), "source": "s", "target": "t"}))
        .collect();
    for id in ["a", "b", "c"] {
        write_records(&d.join(format!("{id}.jsonl")), &recs);
    }
    let tasks: Vec<_> = ["a", "b", "c"]
        .iter()
        .map(|id| json!({"task_id": id, "benchmark": "flan", "category": "x", "records_path": format!("{id}.jsonl")}))
        .collect();
    let manifest = d.join("m.json");
    write_json(
        &manifest,
        &json!({"benchmarks": [{"name": "flan", "instruction_style": "raw"}], "tasks": tasks}),
    );
    let out = d.join("reg");

    let ok = run_bin(&["ingest", p(&manifest), "--seed", "1", "--out", p(&out)]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(Registry::load(&out.join("registry.json")).unwrap().len(), 3);
    assert!(out.join("run_manifest.json").exists() && out.join("digests.json").exists());

    let again = run_bin(&["ingest", p(&manifest), "--seed", "1", "--out", p(&out)]);
    assert_eq!(again.status.code(), Some(3));
    let forced = run_bin(&["ingest", p(&manifest), "--seed", "1", "--out", p(&out), "--force"]);
    assert_eq!(forced.status.code(), Some(0));

    fs::remove_file(d.join("b.jsonl")).unwrap();
    let missing = run_bin(&["ingest", p(&manifest), "--seed", "1", "--out", p(&d.join("other"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("b.jsonl"));

    let no_seed = run_bin(&["ingest", p(&manifest), "--out", p(&d.join("x"))]);
    assert_eq!(no_seed.status.code(), Some(2));
}

#[test]
fn dedup_without_eval_tasks_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = seven_benchmark_corpus(dir.path(), 0);
    let reg = dir.path().join("reg");
    run_args(&["ingest", p(&manifest), "--seed", "1", "--out", p(&reg)]).unwrap();
    let out = dir.path().join("dd");
    run_args(&["dedup", "--registry", p(&reg), "--seed", "1", "--out", p(&out)]).unwrap();
    assert_eq!(fs::read_to_string(out.join("dedup.jsonl")).unwrap(), "");
    assert_eq!(read_json(&out.join("dedup_summary.json"))["threshold"], 0.01);
}

#[test]
fn dedup_flags_copied_eval_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let long =
        |i: usize| format!("this is a fairly long passage number {i} that repeats word for word across the two tasks");
    let train: Vec<_> = (0..50)
        .map(|i| json!({"record_id": i.to_string(), "source": long(i), "target": "x"}))
        .collect();
    let eval: Vec<_> = (0..50)
        .map(|i| {
            let src = if i < 5 { long(i) } else { format!("unrelated {i}") };
            json!({"record_id": i.to_string(), "source": src, "target": "y"})
        })
        .collect();
    write_records(&d.join("tr.jsonl"), &train);
    write_records(&d.join("ev.jsonl"), &eval);
    write_json(
        &d.join("m.json"),
        &json!({"benchmarks": [{"name": "flan", "instruction_style": "raw"}], "tasks": [
            {"task_id": "tr", "benchmark": "flan", "category": "a", "records_path": "tr.jsonl"},
            {"task_id": "ev", "benchmark": "flan", "category": "b", "records_path": "ev.jsonl", "split": "test"}
        ]}),
    );
    run_args(&[
        "ingest",
        p(&d.join("m.json")),
        "--seed",
        "0",
        "--out",
        p(&d.join("reg")),
    ])
    .unwrap();
    let res = run_args(&[
        "dedup",
        "--registry",
        p(&d.join("reg")),
        "--seed",
        "0",
        "--out",
        p(&d.join("dd")),
    ])
    .unwrap();
    assert!(res.message.contains("1 flagged"));
    let line = fs::read_to_string(d.join("dd/dedup.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(entry["fraction"], 0.1);
}

#[test]
fn mixture_pack_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = seven_benchmark_corpus(d, 2);
    let reg = d.join("reg");
    run_args(&["ingest", p(&manifest), "--seed", "1", "--out", p(&reg)]).unwrap();
    let split = d.join("split");
    run_args(&[
        "splits",
        "--registry",
        p(&reg),
        "--plan",
        p(&d.join("plan.json")),
        "--out",
        p(&split),
    ])
    .unwrap();

    let mix = d.join("mix");
    run_args(&[
        "mixture",
        "--registry",
        p(&split),
        "--mixture",
        "4/2/20/25/45/2/2",
        "--seed",
        "5",
        "--draws",
        "3000",
        "--shard-size",
        "1000",
        "--out",
        p(&mix),
    ])
    .unwrap();
    let stats = read_json(&mix.join("mixture_stats.json"));
    assert_eq!(stats["configured"]["promptsource"], 0.45);
    assert_eq!(stats["configured"]["crossfit"], 0.04);
    assert_eq!(stats["shards"], 3);
    assert!(mix.join("stream-00002.jsonl").exists());

    // config file supplies seed and seq_len; the flag overrides seq_len
    let cfg = d.join("run.json");
    write_json(&cfg, &json!({"seed": 5, "seq_len": 512}));
    let pk = d.join("pk");
    run_args(&[
        "pack",
        "--registry",
        p(&split),
        "--stream",
        p(&mix),
        "--config",
        p(&cfg),
        "--seq-len",
        "128",
        "--out",
        p(&pk),
    ])
    .unwrap();
    let (header, seqs) = read_shard(fs::File::open(pk.join("packed-00000.bin")).unwrap()).unwrap();
    assert_eq!(header.seq_len, 128);
    assert_eq!(header.vocab_size, 257);
    assert_eq!(header.seed, 5);
    assert!(seqs.iter().all(|s| s.len() == 128));
    let manifest = read_json(&pk.join("run_manifest.json"));
    assert_eq!(manifest["settings"]["seq_len"], 128);
    let pstats = read_json(&pk.join("pack_stats.json"));
    assert_eq!(pstats["total"]["examples"], 3000);
    assert_eq!(pstats["total"]["dropped"], 0);

    let pk2 = d.join("pk2");
    run_args(&[
        "pack",
        "--registry",
        p(&split),
        "--stream",
        p(&mix),
        "--config",
        p(&cfg),
        "--out",
        p(&pk2),
    ])
    .unwrap();
    assert_eq!(read_json(&pk2.join("run_manifest.json"))["settings"]["seq_len"], 512);

    let pk3 = d.join("pk3");
    run_args(&[
        "pack",
        "--registry",
        p(&split),
        "--stream",
        p(&mix),
        "--seed",
        "5",
        "--out",
        p(&pk3),
        "--metaicl",
    ])
    .unwrap();
    let (header, _) = read_shard(fs::File::open(pk3.join("packed-00000.bin")).unwrap()).unwrap();
    assert_eq!(header.seq_len, 2048);
}

#[test]
fn mixture_requires_proportions_for_every_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = seven_benchmark_corpus(dir.path(), 0);
    let reg = dir.path().join("reg");
    run_args(&["ingest", p(&manifest), "--seed", "1", "--out", p(&reg)]).unwrap();
    let err = run_args(&[
        "mixture",
        "--registry",
        p(&reg),
        "--mixture",
        "1/2/3",
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("m")),
    ]);
    assert!(matches!(err, Err(Failure::Input(_))));
    let err = run_args(&[
        "mixture",
        "--registry",
        p(&reg),
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("m2")),
    ]);
    assert!(matches!(err, Err(Failure::Input(_))));
}

#[test]
fn eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = scripted_eval_corpus(d);
    run_args(&["ingest", p(&manifest), "--seed", "2", "--out", p(&d.join("reg"))]).unwrap();
    let ev = d.join("ev");
    run_args(&[
        "eval",
        "--registry",
        p(&d.join("reg")),
        "--scorer",
        "uniform",
        "--seed",
        "2",
        "--shots",
        "0,2",
        "--max-gen-tokens",
        "4",
        "--out",
        p(&ev),
    ])
    .unwrap();
    let report = read_json(&ev.join("report.json"));
    assert_eq!(report["combined"], 0.0);
    let shots: Vec<u64> = report["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["shots"].as_u64().unwrap())
        .collect();
    assert!(shots.contains(&0) && shots.contains(&2));

    let from_leaves = run_args(&["report", p(&ev.join("leaves.jsonl"))]).unwrap();
    let from_dir = run_args(&["report", p(&ev)]).unwrap();
    assert_eq!(from_leaves.message, from_dir.message);
    assert!(from_dir.message.contains("combined 0.0000"));
}

#[test]
fn eval_fails_on_unrenderable_template() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_records(
        &d.join("t.jsonl"),
        &[json!({"record_id": "1", "source": "s", "target": "t"})],
    );
    write_json(
        &d.join("m.json"),
        &json!({"benchmarks": [{"name": "flan", "instruction_style": "instance_level"}], "tasks": [
            {"task_id": "t", "benchmark": "flan", "category": "c", "records_path": "t.jsonl", "split": "test",
             "templates": [{"template_id": "bad", "instruction_style": "instance_level", "instruction_text": "{passage}"}]}
        ]}),
    );
    run_args(&[
        "ingest",
        p(&d.join("m.json")),
        "--seed",
        "0",
        "--out",
        p(&d.join("reg")),
    ])
    .unwrap();
    let out = run_bin(&[
        "eval",
        "--registry",
        p(&d.join("reg")),
        "--seed",
        "0",
        "--out",
        p(&d.join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("passage"));
}

#[test]
fn stats_prints_tables() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = seven_benchmark_corpus(dir.path(), 1);
    let reg = dir.path().join("reg");
    run_args(&["ingest", p(&manifest), "--seed", "1", "--out", p(&reg)]).unwrap();
    let res = run_args(&["stats", "--registry", p(&reg), "--seed", "1"]).unwrap();
    assert!(res.message.contains("promptsource"));
    assert!(res.message.contains("heldcat"));
    assert!(res.out_dir.is_none());
}
