//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad resolution, zero objects, indivisible sizes, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// A runtime contract was violated (shape mismatch, invalid distribution, ...).
    #[error("contract error: {0}")]
    Contract(String),
    /// A value fell outside its documented range (e.g. event outside its window).
    #[error("range error: {0}")]
    Range(String),
    /// Malformed file content (event files, checkpoints, configs, archives).
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
