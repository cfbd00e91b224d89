use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("centering undetermined: projection has no structure to correlate")]
    CenteringUndetermined,

    #[error("unknown kernel `{0}` (expected `ss` or `bst`)")]
    UnknownKernel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a TOMOVOL1 file")]
    BadMagic { path: PathBuf },

    #[error("{path}: invalid header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("{path}: truncated or oversized volume: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("stage `{stage}` failed on job {sequence_id}: {source}")]
    Stage {
        stage: String,
        sequence_id: u64,
        drained: Vec<u64>,
        #[source]
        source: Box<Error>,
    },

    #[error("memory estimate {estimate} bytes exceeds budget {budget} bytes")]
    MemoryBudget { estimate: u64, budget: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
