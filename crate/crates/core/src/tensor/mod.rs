//! Dense tensors, seeded randomness, numeric kernels and reverse-mode
//! gradients.

pub mod gradcheck;
pub mod kernels;
mod params;
pub mod rng;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_report, GradCheckReport};
pub use kernels::{cross_entropy, dropout, kl_bidirectional, mse_mean, row_softmax};
pub use params::ModelParams;
pub use rng::RngStream;
pub use tape::{GradientTape, Var};
pub use tensor::Tensor;
