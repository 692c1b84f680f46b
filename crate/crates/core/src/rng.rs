//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a [`SimRng`] derived from the
//! master seed and a [`StreamKey`]. Keys are mixed with SplitMix64 into a
//! 64-bit seed for ChaCha8, so a stream depends only on its key and never on
//! the order in which other streams were consumed. This is what lets client
//! rounds run concurrently without changing results.
//!
//! Gaussian variates use the Box-Muller transform on uniforms in (0, 1]; both
//! outputs of each pair are used, in order. Uniforms are the 53-bit
//! `f64` conversion provided by `rand`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for inside one client's round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Mutation { variant: u32 },
    Shuffle { variant: u32 },
    Noise,
    Dropout,
    Init,
    Other(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Mutation { variant } => (1 << 32) | u64::from(variant),
            Purpose::Shuffle { variant } => (2 << 32) | u64::from(variant),
            Purpose::Noise => 3 << 32,
            Purpose::Dropout => 4 << 32,
            Purpose::Init => 5 << 32,
            Purpose::Other(tag) => (6 << 32) | u64::from(tag),
        }
    }
}

/// Hierarchical address of a stream: round, then client, then purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub round: u64,
    pub client: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(round: u64, client: u64, purpose: Purpose) -> Self {
        Self {
            round,
            client,
            purpose,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one seed.
pub fn mix_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5145_464C_u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream for `key` under `master_seed`.
pub fn stream(master_seed: u64, key: StreamKey) -> SimRng {
    seeded(mix_seed(&[
        master_seed,
        key.round,
        key.client,
        key.purpose.code(),
    ]))
}

/// Uniform draw in [0, 1).
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Fill `out` with independent standard normal draws.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_mut(2);
    for pair in &mut chunks {
        let (a, b) = box_muller(rng);
        pair[0] = a;
        if pair.len() > 1 {
            pair[1] = b;
        }
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    fill_standard_normal(rng, &mut out);
    out
}

fn box_muller<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // 1 - [0,1) keeps the log argument away from zero
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

pub fn shuffle<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T]) {
    items.shuffle(rng);
}
