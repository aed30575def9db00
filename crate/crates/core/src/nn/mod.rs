//! Differentiable primitives with hand-written backward passes.
//!
//! Every op comes as a forward function plus a backward function that
//! accumulates parameter gradients and returns the input gradient. The
//! gradient tests in `tests/gradients.rs` hold each of them to central
//! finite differences.

pub mod activation;
pub mod container;
pub mod conv;
pub mod gradcheck;
pub mod image;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod pool;
pub mod tensor;

pub use activation::{elu, elu_backward, gated_unit, gated_unit_backward, relu, relu_backward, sigmoid};
pub use conv::{conv1d, conv1d_backward, Conv1d, Padding};
pub use gradcheck::grad_check;
pub use image::{max_pool2d, max_pool2d_backward, BatchNorm2d, Conv2d, Linear};
pub use loss::{argmax, cross_entropy_vector, softmax, softmax_cross_entropy};
pub use optim::{Adam, AdamConfig};
pub use pool::{avg_pool, avg_pool_backward, upsample_repeat, upsample_repeat_backward};
pub use tensor::{Module, Param, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("parameter container: {0}")]
    Container(String),
    #[error("i/o: {0}")]
    Io(String),
}
