//! Counter-based seed derivation.
//!
//! Every random draw in the crate is keyed by a tuple of integers mixed into a
//! single 64-bit seed, so results do not depend on evaluation order or on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream seed from a root seed and an ordered list of counters.
pub fn derive(root: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(mix64(root), |acc, &c| mix64(acc ^ mix64(c.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng(root: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, counters))
}

// Stream tags keep independent consumers of one root seed apart.
pub(crate) const TAG_SPLIT: u64 = 1;
pub(crate) const TAG_SYNTH: u64 = 2;
pub(crate) const TAG_SAMPLER: u64 = 3;
pub(crate) const TAG_BOOTSTRAP: u64 = 4;
pub(crate) const TAG_POSTPROCESS: u64 = 5;
pub(crate) const TAG_SUBSAMPLE: u64 = 6;
