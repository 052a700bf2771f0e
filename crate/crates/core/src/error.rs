use std::io;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An operation was called outside its domain (bad argument, wrong mode).
    #[error("usage error: {0}")]
    Usage(String),
    /// A clip request needs more source frames than are available.
    #[error("range error: need {required} source frames, have {available}")]
    Range { required: usize, available: usize },
    /// A tensor file or manifest is malformed.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },
    /// A mask does not have the temporal structure an operation requires.
    #[error("structure error: {0}")]
    Structure(String),
    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn usage_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
