use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank-deficient problem: {0}")]
    RankDeficient(String),

    #[error("parameter not identifiable from the data: {0}")]
    Unidentifiable(String),

    #[error("fit did not converge after {iterations} iterations (chi-square {chi_square:.6e})")]
    NotConverged {
        iterations: usize,
        chi_square: f64,
        /// Weighted residuals at the last accepted point.
        residuals: Vec<f64>,
    },

    #[error("singular normal matrix at the optimum (parameter {parameter} unconstrained)")]
    Singular { parameter: String },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

impl Error {
    /// True for errors that mean "the data did not support a fit".
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::Singular { .. } | Error::RankDeficient(_) | Error::Unidentifiable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {value}")))
    }
}
