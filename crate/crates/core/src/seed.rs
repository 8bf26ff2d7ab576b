//! Seed derivation and content digests.
//!
//! Every random stream in the harness is keyed by a child seed derived from
//! the master seed, a purpose tag and a list of indices, so that two streams
//! never share state and any single stream can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `(master, purpose, indices)`.
pub fn child_seed(master: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seeded generator for a derived stream.
pub fn rng_for(master: u64, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, purpose, indices))
}

/// Stable 64-bit key for a string, used to fold names into seed indices.
pub fn string_key(text: &str) -> u64 {
    child_seed(0, text, &[])
}

/// Hex-encoded SHA-256 of the concatenated parts, each length-prefixed.
pub fn digest_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Uniform value in `[0, 1)` from a keyed hash. Stable across processes.
pub fn unit_interval(seed: u64, purpose: &str, data: &[u8]) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update([0u8]);
    hasher.update(data);
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    // 53 high bits give an exactly representable double.
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}
