//! Dense double-precision matrices, activation kernels and a portable seeded
//! random source. Every other module is written in terms of these.

mod matrix;
mod rng;

pub use matrix::{matmul, sigmoid, sigmoid_scalar, softmax_row, tanh_ew, Matrix};
pub use rng::{rng_uniform, Rng};
