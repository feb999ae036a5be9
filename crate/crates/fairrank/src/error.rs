use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; carries the 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Input violated a documented invariant (duplicate ids, grade range, ...).
    #[error("{0}")]
    Validation(String),

    /// I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Argument outside a function's mathematical domain.
    #[error("{0}")]
    Domain(String),

    /// Instance too large for exact enumeration.
    #[error("instance too large for exact enumeration: {0}")]
    SizeGuard(String),

    /// All raw scores identical; callers must fall back to uniform scores.
    #[error("normalization stats are degenerate (std = 0); fall back to uniform scores")]
    DegenerateStats,

    /// Bad run configuration (CLI flags or config file).
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
