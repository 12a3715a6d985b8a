//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpfError {
    /// Malformed input: bad breakpoints, non-monotone branch, bad driver data.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A point or interval lies outside the domain of the object queried.
    #[error("out of domain: {0}")]
    Domain(String),
    /// A structural hypothesis of the theory fails (no full branch, empty cone, ...).
    #[error("assumption violated: {0}")]
    Assumption(String),
    /// An iteration failed to converge or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl RpfError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        RpfError::InvalidInput(msg.into())
    }
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        RpfError::Domain(msg.into())
    }
    pub(crate) fn assumption(msg: impl Into<String>) -> Self {
        RpfError::Assumption(msg.into())
    }
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        RpfError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, RpfError>;
