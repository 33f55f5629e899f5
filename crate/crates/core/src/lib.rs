//! Multi-task word usage error detection.
//!
//! A parallel public/private Bi-LSTM scores each token of a sentence with
//! the probability that it is a misused word. A shared (public) encoder is
//! also trained on an auxiliary per-token task, either POS tagging or word
//! log-frequency classification. Everything, including backpropagation, is
//! implemented directly on dense `f64` matrices.

mod checksum;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
