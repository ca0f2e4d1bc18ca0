//! Seed derivation for independent deterministic RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an RNG stream from (seed, a, b) with splitmix64 finalizers.
/// Streams for different (a, b) are independent of evaluation order, so
/// per-item randomness never depends on batching or scheduling.
pub fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}
