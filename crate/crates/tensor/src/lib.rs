//! Dense `f32` tensors with tape-based reverse-mode differentiation.
//!
//! Learnable tensors live in a [`ParamStore`]; a [`Tape`] borrows them for one
//! forward/backward pass and hands back [`Gradients`], which the store
//! accumulates before an [`Optimizer`] step.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::Archive;
pub use error::{Result, TensorError};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
