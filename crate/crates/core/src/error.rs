use thiserror::Error;

use crate::seqlang::SeqError;

#[derive(Debug, Error)]
pub enum Error {
    /// A configured physical quantity violates its type invariant.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Sequence(#[from] SeqError),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
