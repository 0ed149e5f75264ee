//! Adaptive piecewise-linear activations and a small CNN toolkit to study them.
//!
//! The crate is self-contained: tensors, layers, backpropagation, Adam,
//! a CIFAR loader, a seeded multi-run experiment harness with significance
//! tests, and an activation microbenchmark.
//!
//! ```
//! use pilu::activations::{pilu_forward, PiluParams};
//!
//! let p = PiluParams::new(2.0, 0.5, 1.0);
//! assert_eq!(pilu_forward(3.0, &p), 5.0);
//! assert_eq!(pilu_forward(1.0, &p), 1.0);
//! assert_eq!(pilu_forward(-1.0, &p), 0.0);
//! ```

pub mod activations;
pub mod bench;
pub mod data;
pub mod error;
pub mod experiments;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// The guide in `book/`, compiled so its examples stay in sync with the code.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/activations.md")]
    mod activations {}
    #[doc = include_str!("../../../book/src/sharing.md")]
    mod sharing {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/gradient-checking.md")]
    mod gradient_checking {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
