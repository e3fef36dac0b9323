use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants follow the failure classes used throughout the crate:
/// bad configuration (including shape mismatches), bad input data,
/// API misuse, and breached invariants.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

impl Error {
    /// Process exit status: 2 for anything rejected during validation,
    /// 3 for a breached invariant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::Usage(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Json(_) => 2,
            Error::Invariant(_) => 3,
            Error::Numerical(_) | Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}
