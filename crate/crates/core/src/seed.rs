//! Deterministic seed derivation.
//!
//! Every stochastic routine takes an explicit `u64` seed. Nested routines
//! derive child seeds from the parent seed plus a fixed tag, so results are
//! reproducible regardless of call order and independent RNG streams never
//! alias.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a parent seed and a tag string.
///
/// Uses an FNV-1a fold of the tag into the parent seed followed by a
/// splitmix64 finalizer. Stable across platforms and releases.
pub fn derive(parent: u64, tag: &str) -> u64 {
    let mut h = parent ^ 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

/// Derive a child seed from a parent seed and an index.
pub fn derive_idx(parent: u64, tag: &str, idx: u64) -> u64 {
    splitmix64(derive(parent, tag) ^ splitmix64(idx.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Deterministic RNG for a given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
