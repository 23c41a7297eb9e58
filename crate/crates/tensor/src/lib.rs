//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`). The
//! networks built on top of this crate run in `f32`; `f64` instantiations are
//! used where a tighter numerical reference is useful (gradient checks).

pub mod container;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod param;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use param::{Adam, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor, the working type for all networks.
pub type Tensor32 = Tensor<f32>;
pub type Graph32 = Graph<f32>;
pub type ParamStore32 = ParamStore<f32>;
