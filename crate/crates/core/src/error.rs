use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by user input or configuration rather than a
    /// failure during computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Validation(_)
                | Error::InsufficientData(_)
                | Error::Config(_)
                | Error::Format(_)
                | Error::Range(_)
                | Error::Compatibility(_)
        )
    }
}
