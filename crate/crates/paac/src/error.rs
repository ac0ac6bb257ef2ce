//! Library-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Non-finite value produced during evaluation; carries the offending point.
    NonFinite { what: &'static str, t: f64, x: Vec<f64> },
    /// Violated call precondition (e.g. a zero finite-difference step).
    Precondition(String),
    /// Requested quantity does not exist for this problem (e.g. no closed form).
    Unsupported(&'static str),
    /// Problem name not in the registry.
    UnknownProblem { name: String, known: Vec<&'static str> },
    /// Bad or unknown configuration key.
    Config { key: String, msg: String },
    /// Checkpoint does not match the configured architecture.
    CheckpointMismatch { expected: String, found: String },
    /// Training diverged: validation metrics went non-finite.
    Diverged { step: u64 },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { what, t, x } => {
                write!(f, "non-finite {what} at t={t}, x={x:?}")
            }
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::Unsupported(what) => write!(f, "unsupported: {what}"),
            Error::UnknownProblem { name, known } => {
                write!(f, "unknown problem '{name}'; registered: {}", known.join(", "))
            }
            Error::Config { key, msg } => write!(f, "config key '{key}': {msg}"),
            Error::CheckpointMismatch { expected, found } => {
                write!(f, "checkpoint mismatch: expected {expected}, found {found}")
            }
            Error::Diverged { step } => write!(f, "training diverged at step {step}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
