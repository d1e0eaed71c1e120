//! Seed derivation. Every random draw in the crate goes through a ChaCha8
//! stream keyed by `(seed, tag)` so independent consumers never share state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::{Real, Tensor};

pub type DetRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a numeric tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn rng(seed: u64, name: &str) -> DetRng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag(name)))
}

pub fn normal<F: Real>(rng: &mut DetRng, std: f64) -> F {
    let z: f64 = rng.sample(StandardNormal);
    F::from_f64(z * std)
}

/// Xavier (Glorot) uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Real>(rng: &mut DetRng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| F::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub fn standard_normal<F: Real>(rng: &mut DetRng, shape: &[usize]) -> Tensor<F> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal(rng, 1.0)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
