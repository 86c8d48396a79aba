//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] keyed by
//! a 64-bit seed and a 64-bit stream id. Parallel work derives one stream per
//! task index with [`substream`], so results never depend on scheduling.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream reserved for drawing the design matrix of a synthetic configuration.
pub const DESIGN_STREAM: u64 = u64::MAX;

/// Returns the generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a two-level task index into a stream id (`outer` in the high 32 bits).
pub fn stream_id(outer: u32, inner: u32) -> u64 {
    ((outer as u64) << 32) | inner as u64
}

/// Mixes extra words into a seed (SplitMix64 finalizer), for deriving child seeds.
pub fn mix_seed(seed: u64, words: &[u64]) -> u64 {
    let mut h = seed;
    for &w in words {
        h ^= w.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
