//! Crate-wide error type.
//!
//! Variants are grouped by how the binary reports them: usage and data errors
//! exit with code 2, everything else (internal/protocol failures) with 1.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value exceeded the fixed-point magnitude bound or was non-finite.
    #[error("range error: {0}")]
    Range(String),

    /// Tensor shapes or scales incompatible for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Statistically degenerate input (e.g. an empty rating vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A preprocessing store ran out of triples or mask pairs mid-protocol.
    #[error("preprocessing underflow: {0}")]
    Preprocessing(String),

    /// A counterparty misbehaved or a session failed mid-protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Transport-level failure (closed channel, framing, socket).
    #[error("transport error: {0}")]
    Transport(String),

    /// Malformed on-disk or on-wire bytes (bad magic, truncated payload).
    #[error("format error: {0}")]
    Format(String),

    /// Unusable user input: missing files, bad config keys, bad flags.
    #[error("usage error: {0}")]
    Usage(String),

    /// Dataset problems: missing IDX files, label/image count mismatch.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/data errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Data(_) => 2,
            _ => 1,
        }
    }
}
