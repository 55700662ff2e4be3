//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every backward rule is itself written with differentiable tensor ops, so
//! `Tensor::backward_with_graph` yields gradients that can be differentiated
//! again. That is what a gradient-norm penalty on a convolutional critic needs.

mod elementwise;
pub mod finite_diff;
mod linalg;
mod shape;
mod tensor;

pub use elementwise::broadcast_shape;
pub use linalg::ConvGeom;
pub use tensor::{is_grad_enabled, no_grad, Gradients, Tensor};
