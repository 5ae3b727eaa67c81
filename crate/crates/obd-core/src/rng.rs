//! Seed derivation helpers.
//!
//! Every stochastic operation in the crate takes a `u64` seed and builds its
//! own [`ChaCha8Rng`] stream. Independent sub-streams (per trial, per episode,
//! per outer step) are derived with [`split_seed`] so that results do not
//! depend on execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seed/tag pairs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a master seed and a stream tag.
pub fn split_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Derive a child seed from a master seed and two stream tags.
pub fn split_seed2(seed: u64, tag_a: u64, tag_b: u64) -> u64 {
    split_seed(split_seed(seed, tag_a), tag_b)
}

/// Seeded generator with a stream that is stable across platforms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
