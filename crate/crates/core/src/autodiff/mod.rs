//! Minimal dense tensors with reverse-mode differentiation.
//!
//! Forward and backward values are `f32`; every reduction (convolution and
//! dense inner products, pooling sums, losses) accumulates in `f64`.

mod kernels;
mod tape;
mod tensor;

pub use kernels::ConvGeometry;
pub use tape::{Gradients, Tape, Var, SCORE_CLAMP};
pub use tensor::Tensor;
