//! Online video instance segmentation: a feature-pyramid detector with
//! residual temporal fusion, a message-passing graph over object states for
//! cross-frame association, an online tracker, and the evaluation protocols
//! used to score it.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod object_graph;
pub mod perception;
pub mod pngio;
pub mod resfuser;
pub mod scalar;
pub mod synthdata;
pub mod tensor;
pub mod tracker;

#[cfg(test)]
pub(crate) mod testutil;

pub use autodiff::{Gradients, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision model used for training and inference.
pub type Model32 = harness::Model<f32>;
/// Double-precision model used by gradient checks.
pub type Model64 = harness::Model<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
