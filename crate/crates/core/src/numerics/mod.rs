//! Deterministic tensor arithmetic shared by every model in the crate.
//!
//! Storage is generic over [`Real`] (`f32` for training and checkpoints,
//! `f64` for gradient checks). Every reduction accumulates in `f64` and walks
//! its operands in a fixed order, so equal inputs give bit-identical outputs.

mod activation;
mod conv;
mod gradcheck;
mod real;
mod rng;
mod tensor;

pub use activation::{relu, sigmoid, sigmoid_scalar, softmax, softmax_slice};
pub use conv::{
    conv2d, conv2d_backward, conv2d_full, conv2d_input_grad, conv2d_kernel_grad, conv2d_valid,
    conv_output_extent, ConvGrads,
};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use real::Real;
pub use rng::RandomStream;
pub use tensor::Tensor;
