//! Seeded parameter initialization.
//!
//! Every module draws from its own stream keyed by `(seed, path)`, so adding
//! or removing one submodule leaves the initial weights of the others intact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::tensor::Tensor;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random stream for the module at `path`.
pub fn rng_for(seed: u64, path: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(path.as_bytes()).rotate_left(17))
}

/// Joins a parent path and a child name with `.`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `[-b, b]` with `b = gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform<T: Element, R: Rng>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Gain for ReLU-family activations.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
