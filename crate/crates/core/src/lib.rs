//! Neural proximal gradient descent for linear inverse imaging problems.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod baselines;
pub mod complex;
pub mod contraction;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod metrics;
pub mod ops;
pub mod parallel;
pub mod pgm;
pub mod prox;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod unroll;

pub use complex::ComplexImage;
pub use error::{NpgdError, Result};
pub use tensor::Tensor;
