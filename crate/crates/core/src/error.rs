//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file did not parse as the expected format.
    #[error("format error at byte {offset}: {message}")]
    DataFormat { offset: u64, message: String },

    /// A non-finite value appeared during simulation.
    #[error("numeric error at step {step}, projection {projection}: {message}")]
    Numeric {
        step: usize,
        projection: usize,
        message: String,
    },

    /// A model file failed its checksum or was truncated.
    #[error("model file corrupted: {0}")]
    Corrupt(String),

    /// A model file has a format version this build does not read.
    #[error("unsupported model version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
