//! Deterministic random-number streams.
//!
//! Every stochastic operation in this crate takes an explicit 64-bit seed and
//! derives independent ChaCha8 streams from it. Identical seeds give
//! bit-identical results on every platform, regardless of how work is split
//! into batches or threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root generator for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`. Streams with the same seed and
/// different ids never overlap; this is what per-sample and per-round
/// parallel draws are built on.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed for a named stage (splitmix64 finalizer). Used where
/// an operation must hand a *seed*, not a generator, to a sub-operation.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
