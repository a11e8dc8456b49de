//! Dense tensors and the reverse-mode differentiation kernel the model is
//! built from.

mod gradcheck;
mod graph;
pub mod rng;
mod tensor;

pub use gradcheck::{grad_check, relative_error, scaled_error, GradCheckReport, SCALE_FLOOR};
pub use graph::{Ew, Gradients, Graph, Reduce, Var, LAYER_NORM_EPS, SQRT_EPS};
pub use tensor::Tensor;
