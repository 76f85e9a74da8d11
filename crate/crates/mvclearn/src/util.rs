//! Seeded RNG derivation shared across modules.
//!
//! All stochastic choices derive a fresh ChaCha stream from
//! `(seed, stream label, index)` so that runs are reproducible and resuming
//! from a checkpoint replays the exact same randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub(crate) fn derive_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    let tag = fnv1a64(stream.as_bytes());
    let mut s = [0u8; 32];
    s[0..8].copy_from_slice(&seed.to_le_bytes());
    s[8..16].copy_from_slice(&tag.to_le_bytes());
    s[16..24].copy_from_slice(&index.to_le_bytes());
    s[24..32].copy_from_slice(&(seed ^ tag ^ index.rotate_left(17)).to_le_bytes());
    ChaCha8Rng::from_seed(s)
}
