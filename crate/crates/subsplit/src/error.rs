//! Crate-wide error type. Numeric kernels return structured errors instead of
//! panicking so the CLI and the phase runner can attach context.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape mismatch between two operands; both shapes are named.
    #[error("{op}: dimension mismatch: left {left:?}, right {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A row index fell outside the tensor.
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowIndex {
        op: &'static str,
        index: usize,
        rows: usize,
    },

    /// The same destination row was written twice in one scatter.
    #[error("scatter_rows: row index {0} appears more than once")]
    DuplicateRow(usize),

    /// An operation produced NaN or infinity.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// An argument failed validation.
    #[error("{op}: {msg}")]
    Parameter { op: &'static str, msg: String },

    /// Operation called on an auxiliary state of the wrong kind.
    #[error("{op}: requires {required} state but got {actual}")]
    Mode {
        op: &'static str,
        required: &'static str,
        actual: &'static str,
    },

    /// A caller broke a documented protocol (for example, updating the
    /// frozen input block of the activation chain).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A data file was malformed.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A run configuration was rejected.
    #[error("config: {0}")]
    Config(String),

    /// A task inside a parallel phase failed; `task` is the subnetwork
    /// index within the phase plan.
    #[error("phase {phase:?}: task {task} failed: {msg}")]
    Phase {
        phase: String,
        task: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
