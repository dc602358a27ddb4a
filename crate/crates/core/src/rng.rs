//! Seeded, splittable randomness.
//!
//! Every stochastic construction takes a `u64` seed. Independent streams are
//! split off a parent seed by hashing the parent together with a label, so
//! the same `(seed, label)` pair always yields the same child stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for the sub-stream named `label`. Kept below 2⁶³ so it
/// survives a TOML round trip.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes")) >> 1
}
