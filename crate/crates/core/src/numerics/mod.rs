//! Dense tensors with tape-style reverse-mode differentiation.

pub mod gradcheck;
mod ops;
mod scalar;
mod tensor;

pub use ops::concat;
pub use scalar::Scalar;
pub use tensor::{no_grad, Gradients, Tensor};
