//! Parameter initialization.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// He-normal init: `N(0, sqrt(2 / fan_in))`.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    let std = (2.0 / fan_in as f32).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let z: f32 = rng.sample(StandardNormal);
        z * std
    })
}

pub fn zeros(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::zeros(IxDyn(shape))
}
