//! Layer-wise regularized dropout for small transformer encoders.
//!
//! Each training example runs through `k` dropout-sampled sub-models. Besides
//! the usual cross-entropy, the sub-models are pulled together at every layer's
//! hidden states, at every attention head's probability matrix, and at the
//! output distribution. A loss-landscape slicer compares the flatness of the
//! minima this produces.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod landscape;
pub mod losses;
pub mod tensor;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};
