//! Seeded randomness. Every stochastic step in the crate draws from a
//! `ChaCha8Rng` derived here from an explicit seed; there is no global RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream for `(seed, stream)`; distinct streams never overlap.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named stream identifiers.
pub mod streams {
    pub const SPEAKERS: u64 = 1;
    pub const TEXTS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const POSE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const SPLIT: u64 = 7;
}

/// Stream for one `(kind, a, b)` cell, e.g. the noise of utterance `(speaker, sentence)`.
pub fn cell_stream(seed: u64, kind: u64, a: usize, b: usize) -> Rng {
    stream(seed, (kind << 48) | ((a as u64 & 0xFF_FFFF) << 24) | (b as u64 & 0xFF_FFFF))
}
