//! Reverse-mode automatic differentiation for the small set of operations a
//! window-attention super-resolution network needs.
//!
//! Tensors are dense and row-major; images are NHWC so that convolutions,
//! pointwise projections and layer norms all act on the trailing dimension.
//! The engine is single-threaded and every reduction has a fixed order, so
//! repeated evaluations are bit-identical.

pub mod check;
mod graph;
mod ops;
mod scalar;
mod tensor;

pub use graph::{AttentionMask, Gradients, Graph, Var};
pub use ops::norm::LAYER_NORM_EPS;
pub use scalar::Scalar;
pub use tensor::Tensor;
