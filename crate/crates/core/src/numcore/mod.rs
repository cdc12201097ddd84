//! Dense tensors, parameter storage and reverse-mode differentiation.

mod graph;
pub mod gradcheck;
mod params;
mod tensor;

pub use graph::{Feed, Gradients, Graph, NodeId, Op, Values};
pub use params::{ParamEntry, ParamStore};
pub use tensor::Tensor;
