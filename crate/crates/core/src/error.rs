use std::fmt;

/// Errors produced by input validation across the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter fell outside its admissible range.
    Domain(String),
    /// Dimensions of two inputs do not agree.
    DimensionMismatch(String),
    /// A construction is infeasible for the given parameters
    /// (e.g. a sampling parameter that yields zero grid points).
    Infeasible(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
