//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants carry enough
//! context to name the failing op, field, or path without a backtrace.

use std::path::PathBuf;

/// Errors produced by any subsystem of this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/graph shape mismatch. `op` names the operation, `detail` the shapes.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    /// A non-finite value (NaN/Inf) appeared where the contract forbids it.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Named parameter missing from a `ParamStore`.
    #[error("unknown parameter `{name}`")]
    MissingParam { name: String },

    /// Attempt to register a parameter name twice.
    #[error("duplicate parameter `{name}`")]
    DuplicateParam { name: String },

    /// Configuration value out of range or schema violation. `field` names the culprit.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// An operation that requires data got none.
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    /// Attention weights failed the normalization contract.
    #[error("attention not normalized: sum = {sum}")]
    AttentionNotNormalized { sum: f64 },

    /// Memory slot count does not match what the operation requires.
    #[error("memory slot mismatch: expected {expected}, got {got}")]
    SlotMismatch { expected: usize, got: usize },

    /// Index outside a collection.
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// Demo dataset file not found or unreadable at train/eval time.
    #[error("dataset not found: {path}")]
    DatasetMissing { path: PathBuf },

    /// Checkpoint file malformed, or its dims disagree with the run config.
    #[error("checkpoint error: {message}")]
    Checkpoint { message: String },

    /// Unknown persona name.
    #[error("unknown persona `{name}`")]
    UnknownPersona { name: String },

    /// Filesystem failure, tagged with the path involved.
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for I/O errors carrying the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Convenience constructor for shape errors.
    pub fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape { op: op.into(), detail: detail.into() }
    }

    /// Convenience constructor for config errors.
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
