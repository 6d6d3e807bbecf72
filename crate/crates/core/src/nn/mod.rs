//! Dense tensors, reverse-mode differentiation, ADAM and parameter files.

mod adam;
pub mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
