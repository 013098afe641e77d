//! Deterministic seed derivation: every randomized stage draws from a ChaCha
//! generator seeded by hashing the global seed together with a stage label,
//! so stages are independent of each other and stable across runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a stage seed as the first eight bytes (little-endian) of
/// SHA-256(global seed as little-endian bytes || stage label).
pub fn derive_seed(global_seed: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A generator for the given stage.
pub fn rng_for(global_seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, stage))
}
