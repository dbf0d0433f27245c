//! Deterministic RNG derivation.
//!
//! Every seeded operation takes a `u64` seed and derives its own ChaCha
//! stream from it plus a label, so that unrelated operations never share
//! random state and results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type PipelineRng = ChaCha8Rng;

/// Root generator for `seed`.
pub fn rng_from_seed(seed: u64) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for `(seed, label)`.
pub fn derive_rng(seed: u64, label: &str) -> PipelineRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Generator for shard `index` of the stream rooted at `(seed, label)`.
///
/// Shards use distinct ChaCha stream ids so their outputs are independent of
/// how shards are later distributed over workers.
pub fn shard_rng(seed: u64, label: &str, index: u64) -> PipelineRng {
    let mut rng = derive_rng(seed, label);
    rng.set_stream(index);
    rng
}
