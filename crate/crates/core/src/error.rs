use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("duplicate index {index} in {what}")]
    DuplicateIndex { what: &'static str, index: usize },

    #[error("invalid sparse matrix: {0}")]
    InvalidSparse(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("label mask is empty")]
    EmptyMask,

    /// A message an update depends on was never delivered.
    #[error("protocol error: missing {kind} message for layer {layer}, {src}→{dst}")]
    Protocol {
        kind: &'static str,
        layer: usize,
        src: usize,
        dst: usize,
    },

    #[error("protocol error: {0}")]
    ProtocolViolation(String),

    #[error("{what} step parameter exceeded {limit:e} without satisfying the majorization condition")]
    Divergence { what: String, limit: f64 },

    #[error("serial and parallel iterates differ by {error:e} (tolerance {tolerance:e})")]
    IterateMismatch { error: f64, tolerance: f64 },

    #[error("agent {agent} failed: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
