//! Error type shared across the crate.

use std::fmt;

/// Errors produced by the factorization library.
#[derive(Debug)]
pub enum Error {
    /// Malformed arguments (length mismatches, out-of-range indices, ...).
    InvalidInput(String),
    /// A text file failed to parse; positions are 1-based.
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// A data cell is NaN or infinite; indices are 0-based.
    NonFinite { channel: usize, sample: usize },
    /// No channels survived preprocessing.
    EmptyData(String),
    /// A stretched profile lost all of its energy to truncation.
    DegenerateProfile { component: usize, stretch: i32 },
    /// Cross-correlation of all-zero inputs has no meaningful peak.
    UndefinedShift(String),
    /// A component profile with zero energy cannot scale the channel map.
    DegenerateComponent(String),
    /// Initialization could not produce a usable starting point.
    DegenerateInit(String),
    /// Inconsistent or impossible run configuration.
    InvalidConfig(String),
    /// The loss became non-finite during optimization.
    Diverged { iteration: usize },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Parse {
                line,
                column,
                message,
            } => write!(f, "parse error at line {line}, column {column}: {message}"),
            Error::NonFinite { channel, sample } => {
                write!(f, "non-finite value at channel {channel}, sample {sample}")
            }
            Error::EmptyData(msg) => write!(f, "no usable data: {msg}"),
            Error::DegenerateProfile { component, stretch } => write!(
                f,
                "degenerate stretched profile for component {component} at b={stretch}: \
                 truncation removed all energy"
            ),
            Error::UndefinedShift(msg) => write!(f, "undefined shift: {msg}"),
            Error::DegenerateComponent(msg) => write!(f, "degenerate component: {msg}"),
            Error::DegenerateInit(msg) => write!(f, "degenerate initialization: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Diverged { iteration } => {
                write!(f, "loss became non-finite at iteration {iteration}")
            }
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
