//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod finite_diff;
mod graph;
mod linalg;
mod tensor;

pub use finite_diff::{finite_diff, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
