use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed JSON: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {record}: invalid {field}: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("support violation at index {index}: q is zero where p is {p}")]
    SupportViolation { index: usize, p: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("token {position} has no counterfactual record")]
    MissingCounterfactual { position: usize },

    #[error("anchor has no output node (position {anchor})")]
    AnchorWithoutOutput { anchor: i64 },

    #[error("invalid circuit graph: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("inadmissible coupling: {0}")]
    InadmissibleCoupling(String),

    #[error("non-finite value in FGW solver at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("trace {trace}, sentence {sentence}: {source}")]
    Stage {
        trace: String,
        sentence: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tensor container: {0}")]
    Tensor(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(
        record: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_stage(self, trace: &str, sentence: usize) -> Self {
        Error::Stage {
            trace: trace.to_string(),
            sentence,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input data rather than an internal fault.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Other(_) => false,
            Error::Stage { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}
