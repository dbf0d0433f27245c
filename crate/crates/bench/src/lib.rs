//! Synthetic inputs shared by the benchmarks.

use instructmix::corpus::{Benchmark, InstructionStyle, RawRecord, Registry, Split, Task, TaskSpec};
use instructmix::mixture::SHORTHAND_ORDER;
use instructmix::packing::TokenizedExample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` examples with lengths uniform in `1..=max_len`, loss on the back half.
pub fn synthetic_examples(n: usize, max_len: usize, seed: u64) -> Vec<TokenizedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            TokenizedExample {
                tokens: (0..len).map(|_| rng.random_range(0..256)).collect(),
                target_spans: vec![len / 2..len],
                provenance: None,
            }
        })
        .collect()
}

/// Whitespace-separated text of `words` tokens drawn from a vocabulary of `vocab` words.
pub fn synthetic_text(words: usize, vocab: usize, rng: &mut ChaCha8Rng) -> String {
    (0..words)
        .map(|_| format!("w{}", rng.random_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A train-only registry with `tasks` tasks spread over the seven benchmarks.
pub fn synthetic_registry(tasks: usize, records: usize) -> Registry {
    let mut reg = Registry::new();
    for b in SHORTHAND_ORDER {
        reg.add_benchmark(Benchmark {
            name: b.into(),
            instruction_style: InstructionStyle::Raw,
        })
        .expect("fresh benchmark");
    }
    for t in 0..tasks {
        let id = format!("task{t}");
        let n = records * (1 + t % 5);
        reg.insert_task(Task {
            spec: TaskSpec {
                task_id: id.clone(),
                benchmark: SHORTHAND_ORDER[t % SHORTHAND_ORDER.len()].into(),
                category: format!("cat{}", t % 11),
                data_source: id.clone(),
                split: Split::Train,
                generalization_level: None,
                example_cap: 100_000,
                num_examples: n as u64,
                subtask: None,
                metric: None,
            },
            templates: vec![],
            records: (0..n).map(|i| RawRecord::new(i.to_string(), "s", "t")).collect(),
        })
        .expect("unique task");
    }
    reg
}
