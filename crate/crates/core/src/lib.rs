//! Adaptive-granularity neural hidden Markov model for order-flow sequences.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod evaluate;
pub mod flow;
pub mod error;
pub mod hmm;
pub mod metrics;
pub mod model;
pub mod params;
pub mod numerics;
pub mod rng;
pub mod stream;
pub mod tape;
pub mod tensor;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;
pub mod transitions;

pub use error::{Error, Result};
pub use tensor::Tensor;
