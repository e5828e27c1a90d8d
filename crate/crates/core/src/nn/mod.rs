//! Small dense network engine: matrices, ReLU MLPs with manual backprop, Adam,
//! fused sigmoid cross-entropy and embedding tables.

mod adam;
mod embedding;
mod loss;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use embedding::{EmbeddingGrads, EmbeddingTable, EmbeddingTables};
pub use loss::{sigmoid, sigmoid_ce, softplus};
pub use matrix::{dot, l2_norm, DenseMatrix};
pub use mlp::{Activation, Layer, LayerGrads, MlpGrads, MlpParams, Tape};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("matrix storage has {len} values, expected {rows}x{cols}")]
    BadStorage { rows: usize, cols: usize, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("layer {layer}: expected input width {expected}, got {found}")]
    LayerInput {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("gradient has {found} layers, expected {expected}")]
    LayerCount { expected: usize, found: usize },
    #[error("tape does not match this network: {reason}")]
    StaleTape { reason: String },
    #[error("adam tensor {tensor}: expected length {expected}, got {found}")]
    AdamShape {
        tensor: usize,
        expected: usize,
        found: usize,
    },
    #[error("label at {index} is {value}, expected 0 or 1")]
    BadLabel { index: usize, value: f64 },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("no id for field {field}")]
    MissingId { field: usize },
    #[error("id {id} out of range for field `{field}` (vocab {vocab})")]
    IdOutOfRange {
        field: String,
        id: usize,
        vocab: usize,
    },
}
