use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sample out of range: {0}")]
    OutOfRange(String),

    #[error("stream has {frames} frames but the window needs {window}")]
    StreamTooShort { frames: usize, window: usize },

    #[error("chunk starts at frame {got}, expected frame {expected}")]
    OutOfOrderChunk { expected: u64, got: u64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}
