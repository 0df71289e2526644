//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure categories reported by the library.
///
/// The categories map onto the CLI exit codes: validation and configuration
/// problems are caller mistakes, `PropertyViolation` means a checked
/// inequality failed, and `Infeasible` means a construction or attack could
/// not be built for the requested parameters.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A size guard was exceeded.
    #[error("capacity error: {what} exceeds the limit of {limit}")]
    Capacity { what: String, limit: usize },

    /// A run or experiment was configured inconsistently.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A construction or attack has no valid parameters.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A checked inequality or identity did not hold.
    #[error("property violation: {0}")]
    PropertyViolation(String),

    /// A search that is expected to succeed found nothing.
    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn configuration(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}
