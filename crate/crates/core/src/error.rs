use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller-supplied arguments are inconsistent (lengths, shapes, counts).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation was called in the wrong order.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN or infinity appeared where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Input carries no information for the requested statistic.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}: line {line}: {kind}")]
    Data {
        path: PathBuf,
        line: usize,
        kind: DataErrorKind,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Distinct diagnostics for rejected rows in a load CSV.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataErrorKind {
    #[error("malformed row: {0}")]
    Malformed(String),
    #[error("duplicate date {0}")]
    DuplicateDate(String),
    #[error("gap in daily series: expected {expected}, found {found}")]
    Gap { expected: String, found: String },
    #[error("non-positive load {0}")]
    NonPositiveLoad(String),
    #[error("dates out of order: {0}")]
    OutOfOrder(String),
    #[error("file contains no data rows")]
    Empty,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
