//! Run configuration file. Every field is optional; flags win over the file
//! and the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use instructmix::mixture::AuxProportions;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,

    pub threshold: Option<f64>,

    pub eps: Option<u64>,
    /// Shorthand string; ignored when `benchmark_proportions` is set.
    pub proportions: Option<String>,
    pub benchmark_proportions: Option<BTreeMap<String, f64>>,
    pub aux_proportions: Option<AuxProportions>,
    pub draws: Option<u64>,
    pub shard_size: Option<u64>,

    pub tokenizer: Option<String>,
    pub seq_len: Option<usize>,
    pub metaicl: Option<bool>,
    pub zipf_a: Option<f64>,
    pub cap_k: Option<usize>,
    pub suffix_loss: Option<bool>,

    pub scorer: Option<String>,
    pub shots: Option<Vec<usize>>,
    pub max_prompts: Option<usize>,
    pub max_gen_tokens: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }
}

/// First present value: flag, then config file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
