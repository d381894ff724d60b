//! Minimal reverse-mode automatic differentiation over dense row-major `f64`
//! tensors, with SGD/Adam updates, labelled random streams and a central
//! finite-difference oracle.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{finite_diff_grad, global_relative_error, max_relative_error, relative_error};
pub use graph::{softmax, Bindings, Graph, NodeId, Op, Value};
pub use optim::{optimizer_step, UpdateRule};
pub use params::{glorot_uniform, Gradients, OptimState, Param, ParamStore};
pub use rng::{RngState, RngStream};
pub use tensor::Tensor;
