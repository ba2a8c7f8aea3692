use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("degenerate encoding: raw {head} head is the zero vector")]
    DegenerateEncoding { head: &'static str },

    #[error("degenerate projection: data has rank {rank}")]
    DegenerateProjection { rank: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Dataset CSV failures. `row` is 1-based and counts the header line.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("row {row}: missing or malformed header (expected `#dim=<d>,classes=<C>`)")]
    Header { row: usize },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: field {field} is not numeric: {value:?}")]
    NonNumeric {
        row: usize,
        field: usize,
        value: String,
    },

    #[error("row {row}: unknown domain tag {value:?} (expected S or T)")]
    UnknownDomain { row: usize, value: String },

    #[error("row {row}: feature dimension {found} differs from declared {declared}")]
    InconsistentDim {
        row: usize,
        declared: usize,
        found: usize,
    },

    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("row {row}: duplicate sample id {id}")]
    DuplicateId { row: usize, id: u64 },
}
