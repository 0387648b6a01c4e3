//! Named, seed-derived random streams.
//!
//! Every random draw in a session comes from a generator derived from the
//! session seed and a stream label, so a session can be replayed from its seed
//! and its observation sequence alone, independently of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prior = 1,
    Resample = 2,
    Mcmc = 3,
    Observation = 4,
    Design = 5,
    Static = 6,
    Study = 7,
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a seed.
pub fn mix_seed(base: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(base), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Generator for `stream` at the given coordinates (model index, iteration, ...).
pub fn stream_rng(seed: u64, stream: Stream, coords: &[u64]) -> StreamRng {
    let mut words = Vec::with_capacity(coords.len() + 1);
    words.push(stream as u64);
    words.extend_from_slice(coords);
    ChaCha8Rng::seed_from_u64(mix_seed(seed, &words))
}
