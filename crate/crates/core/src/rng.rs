//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha8 stream. The 32-byte
//! ChaCha key is `SHA-256(seed as u64 little-endian || purpose tag as UTF-8)`,
//! so a given `(seed, tag)` pair names one reproducible stream in any language
//! with a ChaCha8 and SHA-256 implementation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn derive_key(seed: u64, tag: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.finalize().into()
}

pub fn stream(seed: u64, tag: &str) -> Stream {
    ChaCha8Rng::from_seed(derive_key(seed, tag))
}

/// A child seed for components that take a plain `u64` (the first eight key
/// bytes, little-endian).
pub fn subseed(seed: u64, tag: &str) -> u64 {
    let key = derive_key(seed, tag);
    u64::from_le_bytes(key[..8].try_into().expect("key has 32 bytes"))
}
