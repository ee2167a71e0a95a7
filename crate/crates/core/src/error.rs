use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{what} did not converge after {iterations} iterations (last iterate: {last})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: String,
    },

    #[error("no resonance in bracket: {0}")]
    NoResonance(String),

    #[error("expansion order {0} is not supported (orders 1 to 3 only)")]
    UnsupportedOrder(usize),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("amplitude out of range: {0}")]
    AmplitudeOutOfRange(String),

    #[error("calibration diverged: {reason} (trace: {trace:?})")]
    Instability { reason: String, trace: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {value}")))
    }
}

pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be non-negative and finite, got {value}")))
    }
}
