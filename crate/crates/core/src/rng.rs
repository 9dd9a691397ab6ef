//! Seeded random number generation.
//!
//! Every simulation draws from ChaCha8 seeded through `seed_from_u64`.
//! Replication `r` of a plan with base seed `b` uses `mix_seed(b, r)`, where
//! `mix_seed` is the SplitMix64 finalizer applied to `b + (r + 1) * 0x9E3779B97F4A7C15`
//! (wrapping). The finalizer is a bijection and the pre-image is injective in
//! `r`, so replication seeds are pairwise distinct.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` for the same seed.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-replication seed.
pub fn mix_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}
