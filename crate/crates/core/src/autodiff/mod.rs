//! Reverse-mode automatic differentiation over dense tensors, plus Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{sgd_step, AdamConfig, AdamState};
pub use graph::{Backward, Graph, Var, LAYER_NORM_EPS};
pub use params::{GradientVector, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
