// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stable hashing and seed derivation.
//!
//! Everything random in the pipeline flows from one global seed. Stages
//! derive their own sub-seed as `seed ^ hash(tag)` so that adding a stage
//! never perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 64-bit content hash: the first eight bytes of SHA-256, little-endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Hash of a seed together with a string key. Used wherever a decision must
/// be a pure function of (id, seed) independent of iteration order.
pub fn keyed_hash(seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// `seed ⊕ hash(tag)`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    seed ^ hash64(tag.as_bytes())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
