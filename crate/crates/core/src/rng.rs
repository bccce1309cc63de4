//! Seeded random streams.
//!
//! Every random draw in the crate goes through ChaCha8 keyed by a `u64`
//! seed. Independent consumers of the same seed use distinct stream ids, so
//! adding draws in one place never shifts the numbers seen elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Stream ids for the crate's random consumers.
pub mod stream {
    pub const RANDN: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const VOLUMES: u64 = 6;
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn randn_with(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Standard-normal tensor; identical `(shape, seed)` give bit-identical output.
pub fn seeded_randn(shape: &[usize], seed: u64) -> Tensor {
    randn_with(&mut rng_for(seed, stream::RANDN), shape)
}

/// `U(-1/√fan_in, 1/√fan_in)` initialization.
pub fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}
