//! Random streams.
//!
//! Every random object in the crate is driven by a `ChaCha8Rng` seeded from a
//! 64-bit value. Independent streams (one per Monte Carlo trial, one per grid
//! point) are derived by mixing the base seed with a stream index through the
//! SplitMix64 finalizer, so the stream a trial sees depends only on
//! `(base_seed, index)` and never on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `base`.
pub fn stream_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(base: u64, index: u64) -> Rng {
    rng_from_seed(stream_seed(base, index))
}

/// Counter-based uniform key for the pair `(a, b)` under `seed`; used where a
/// shared total order over a large agent set is needed without storing it.
#[inline]
pub fn pair_key(seed: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(seed ^ a.wrapping_mul(0xA24B_AED4_963E_E407)) ^ b)
}
