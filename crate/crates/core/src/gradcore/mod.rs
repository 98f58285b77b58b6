//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Graph`] as they execute; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! requires them. Only the handful of ops a small convolutional segmenter
//! needs are provided.

mod conv;
mod graph;
mod optim;
mod tensor;

pub use graph::{Graph, Var, LOG_EPS};
pub use optim::{sgd_step, Sgd, StepDecay};
pub use tensor::{Real, Tensor};
