//! Seeded random generation.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha8 stream
//! cipher generator seeded from a `u64`. ChaCha8's output is fixed by its
//! specification, so a seed yields the same stream on every platform.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("extents must be positive")
}

pub fn normal_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * normal(rng)).collect();
    Tensor::from_vec(shape, data).expect("extents must be positive")
}

pub fn below(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// A uniformly random permutation of `0..n` (Fisher-Yates).
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    items.shuffle(rng);
}
