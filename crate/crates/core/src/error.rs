//! Error type shared across the crate.
//!
//! Variants are grouped by the exit-code contract of the CLI: configuration
//! problems, data problems, and numerical failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A role mapping names a column that does not exist, or a required role
    /// is missing for the requested operation.
    #[error("role error: {0}")]
    Role(String),

    /// A cell failed to parse. Row index is zero-based over data rows.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// An argument is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A fitting routine failed; the message names the (side, index) cell
    /// when the failure happened inside a surface fit.
    #[error("solver error: {0}")]
    Solver(String),

    /// Complete separation in a binary link regression.
    #[error("separation detected: {0}")]
    Separation(String),

    /// A moment matrix is numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A bound evaluates to (or escapes toward) an infinite logical limit;
    /// the index grid must be restricted to the informative region.
    #[error("informativeness error: {0}")]
    Informativeness(String),

    /// Too few bootstrap draws or directions for the requested precision.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// The smoothness/dimension combination leaves no admissible series rate.
    #[error("smoothness error: {0}")]
    Smoothness(String),

    /// Request is valid but unsupported for this input (e.g. no analytic
    /// bounds available for a population oracle).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An experiment or ensemble exceeded its allowed failure rate.
    #[error("failure rate exceeded: {0}")]
    FailureRate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors rooted in the input data rather than the request or
    /// the arithmetic. Used by the CLI to pick exit codes.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Role(_) | Error::Parse { .. } | Error::Io(_) | Error::Csv(_)
        )
    }
}
