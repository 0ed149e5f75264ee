use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp on probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over the batch of `-ln p[true class]`, with `p` clamped to `[1e-12, 1]`.
pub fn categorical_cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    probs.check_same_shape(onehot)?;
    if probs.rank() != 2 {
        return Err(Error::Shape(format!("expected (n, k), got {:?}", probs.shape())));
    }
    let n = probs.shape()[0];
    let total: f64 = probs
        .data()
        .iter()
        .zip(onehot.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    Ok(total / n as f64)
}

/// Gradient of mean cross-entropy with respect to the logits feeding a
/// softmax: `(probs - onehot) / n`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, onehot: &Tensor) -> Result<Tensor> {
    probs.check_same_shape(onehot)?;
    let n = probs.shape()[0] as f64;
    let mut g = probs.clone();
    for (v, &t) in g.data_mut().iter_mut().zip(onehot.data()) {
        *v = (*v - t) / n;
    }
    Ok(g)
}

/// Scaling convention of the L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L2Convention {
    /// `lambda * sum(w^2)`, gradient `2 lambda w`.
    #[default]
    Full,
    /// `lambda / 2 * sum(w^2)`, gradient `lambda w`.
    Half,
}

/// Returns the penalty to add to the loss and its gradient.
pub fn l2_penalty(kernel: &Tensor, lambda: f64, convention: L2Convention) -> (f64, Tensor) {
    let scale = match convention {
        L2Convention::Full => lambda,
        L2Convention::Half => lambda / 2.0,
    };
    (scale * kernel.sum_squares(), kernel.map(|w| 2.0 * scale * w))
}
