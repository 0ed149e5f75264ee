use rand_distr::{Distribution, Normal};

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Standard deviation of Glorot-normal initialisation: `sqrt(2 / (fan_in + fan_out))`.
pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Samples a tensor of the given shape from `Normal(0, glorot_std(fan_in, fan_out))`.
///
/// Convolution kernels use the receptive-field convention:
/// `fan_in = kh * kw * cin`, `fan_out = kh * kw * cout`.
pub fn glorot_normal(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let dist = Normal::new(0.0, glorot_std(fan_in, fan_out)).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}
