//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    #[error("node {node} references undefined input {input}")]
    UndefinedInput { node: usize, input: usize },

    #[error("leaf {node} has no binding")]
    UnboundLeaf { node: usize },

    #[error("binding for leaf {node} has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    BindingShape {
        node: usize,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: String },

    #[error("cholesky failed: matrix not positive definite at pivot {pivot} (value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("gradient root must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("forward pass has not been evaluated for node {node}")]
    NotEvaluated { node: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("transform error: {0}")]
    Transform(String),

    #[error("free state length {got} does not match expected {expected}")]
    FreeStateLength { expected: usize, got: usize },

    #[error("quadrature order {0} out of range (1..=100)")]
    QuadratureOrder(usize),

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("optimization aborted at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
