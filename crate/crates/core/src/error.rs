//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the simulator components.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical or configuration parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Shapes or lengths of two related values do not match.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A requested parameter combination has no physical solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// No voltage qualifies for the quasi-linear region of a database.
    #[error("quasi-linear region not found: {0}")]
    RegionNotFound(String),

    /// A weight cannot be realized as a ring transmission.
    #[error("unmappable weight: {0}")]
    UnmappableWeight(String),

    /// A value was not found on the expected grid.
    #[error("lookup failed: {0}")]
    Lookup(String),

    /// A signal is too short for the requested sampling plan.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// Training did not reach the minimum acceptable accuracy.
    #[error("training failed: {0}")]
    TrainingFailed(String),

    /// A data file is missing or malformed.
    #[error("data format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
