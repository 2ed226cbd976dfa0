//! Deterministic numerical core: tensors, reverse-mode autodiff, LSTM and
//! dense layers, and the Adam optimizer. All arithmetic is `f64`.

mod adam;
pub mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use adam::{clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use graph::{Gradients, Graph, Var};
pub use layers::{dense, lstm_cell, lstm_scan, DenseParams, LstmCellParams, LstmRun, FORGET_BIAS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("loss must be a single element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
