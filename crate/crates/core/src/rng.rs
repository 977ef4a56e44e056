//! Deterministic stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! (seed, stream id). Per-particle work reads only its own stream, so filter
//! output is invariant to thread scheduling and worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; bijective on u64.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed, e.g. one per replicate or chain.
#[inline]
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// RNG for stream `stream` under a fixed key `seed`. Streams with distinct
/// ids never overlap.
#[inline]
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for particle `p` at filter step `s`.
#[inline]
pub fn particle_stream(step: usize, particle: usize) -> u64 {
    ((step as u64) << 32) | particle as u64
}

/// Stream id for the resampling draw at filter step `s`; disjoint from all
/// particle streams.
#[inline]
pub fn resample_stream(step: usize) -> u64 {
    (1 << 63) | step as u64
}
