//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied argument violates an operation's preconditions.
    InvalidArgument(String),
    /// Requested vector length is not a power of two in [4, 64] lanes.
    InvalidVectorLength(usize),
    /// No layout configuration exists for the requested data type.
    UnsupportedConfig(String),
    /// Graph verification failed; carries the offending node id.
    Verify {
        node: usize,
        message: String,
    },
    /// A pass was invoked on inputs it was not produced for.
    InternalConsistency(String),
    /// The virtual machine touched memory outside a buffer under an
    /// active predicate lane.
    Trap {
        buffer: String,
        offset: i64,
    },
    /// Malformed tensor file.
    Format(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::InvalidVectorLength(l) => write!(f, "invalid vector length: {l} lanes"),
            Error::UnsupportedConfig(m) => write!(f, "unsupported configuration: {m}"),
            Error::Verify { node, message } => {
                write!(f, "verification failed at %{node}: {message}")
            }
            Error::InternalConsistency(m) => write!(f, "internal consistency error: {m}"),
            Error::Trap { buffer, offset } => {
                write!(
                    f,
                    "memory trap: buffer '{buffer}' offset {offset} out of bounds"
                )
            }
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
