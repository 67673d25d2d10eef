//! Deterministic, splittable random streams.
//!
//! Every stochastic draw in the crate comes from a [`Prng`]: a ChaCha8 block
//! generator keyed by a 64-bit seed, with a 64-bit stream selector. Streams
//! for sub-tasks (corpus generation, noise per sample and sensor, shuffling)
//! are derived by hashing a path of integers into the stream selector, so a
//! single seed fans out into independent, reproducible streams without ever
//! sharing a generator between consumers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Well-known stream domains. The first element of every derivation path is
/// one of these, so streams from different subsystems never collide.
pub mod domain {
    pub const CORPUS_SIGNATURES: u64 = 1;
    pub const CORPUS_TRAIN: u64 = 2;
    pub const CORPUS_TEST: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const TRAIN_NOISE: u64 = 6;
    pub const VALIDATION_NOISE: u64 = 7;
    pub const EVAL_NOISE: u64 = 8;
    pub const SPLIT: u64 = 9;
    pub const PREVIEW: u64 = 10;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a derivation path into a stream selector.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(GOLDEN, |acc, &id| splitmix64(acc ^ splitmix64(id)))
}

#[derive(Clone, Debug)]
pub struct Prng {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl Prng {
    pub const ALGORITHM: &'static str = "chacha8-stream64";

    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    /// Stream for `(seed, path...)`, e.g. `[domain::TRAIN_NOISE, epoch, sample, sensor]`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        Self::with_stream(seed, stream_id(path))
    }

    /// Child stream of this one; does not advance `self`.
    pub fn child(&self, id: u64) -> Self {
        Self::with_stream(self.seed, stream_id(&[self.stream, id]))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `0..n` (Lemire's nearly-divisionless rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            let low = m as u64;
            if low >= n.wrapping_neg() % n {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer in the inclusive range `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
