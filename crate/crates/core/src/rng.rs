//! Deterministic random streams.
//!
//! Every stochastic draw in training is made from a stream keyed by a tuple
//! such as `(seed, iteration, sample, copy)`, so results do not depend on how
//! work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain tags keep streams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Split = 2,
    Unlabeled = 3,
    Shuffle = 4,
    LabeledNoise = 5,
    StudentNoise = 6,
    TeacherNoise = 7,
    Synthetic = 8,
    Eval = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key tuple into a 64-bit stream seed.
pub fn derive_seed(seed: u64, purpose: Purpose, key: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ (purpose as u64).rotate_left(48));
    for &k in key {
        h = splitmix(h ^ k);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, key))
}

/// Source of standard-normal draws.
pub trait NoiseSource {
    fn next_standard_normal(&mut self) -> f64;
}

/// Standard-normal draws from a seeded ChaCha stream.
pub struct GaussianStream(ChaCha8Rng);

impl GaussianStream {
    pub fn new(seed: u64, purpose: Purpose, key: &[u64]) -> Self {
        Self(stream(seed, purpose, key))
    }
}

impl NoiseSource for GaussianStream {
    fn next_standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}

/// Always draws zero.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn next_standard_normal(&mut self) -> f64 {
        0.0
    }
}
