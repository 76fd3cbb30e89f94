//! Weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numkern::{Real, Tensor};

/// Normal(0, std²) truncated to ±2·std by resampling.
pub fn trunc_normal<T: Real, R: Rng>(dims: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(dims, |_| loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break T::of(z * std);
        }
    })
}

/// Truncated normal with std `gain / sqrt(fan_in)`.
pub fn fan_in_normal<T: Real, R: Rng>(dims: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    trunc_normal(dims, gain / (fan_in as f64).sqrt(), rng)
}
