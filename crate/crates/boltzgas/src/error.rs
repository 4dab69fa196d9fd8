//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model or grid parameter, with a dotted path into the offending field.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Requested impact speed lies outside the invertible range of theta.
    ///
    /// `max_speed` is the largest post-collision normal speed the model can
    /// produce on its probed domain.
    #[error("theta inverse undefined for y = {y:.6e}; maximum representable impact speed is {max_speed:.6e}")]
    ThetaInverseDomain { y: f64, max_speed: f64 },

    /// Adaptive quadrature failed to reach its tolerance.
    #[error("quadrature did not converge: {context} (best estimate {estimate:.6e}, error {error:.3e})")]
    QuadratureNonConvergence {
        context: String,
        estimate: f64,
        error: f64,
    },

    /// Initial datum exceeds the small-data threshold for the monotone iteration.
    #[error(
        "initial datum norm {norm:.6e} exceeds the admissible maximum {max_norm:.6e}; \
         rerun with the threshold override to proceed uncertified"
    )]
    ThresholdExceeded { norm: f64, max_norm: f64 },

    /// Angular integrability check failed, so the envelope constant is undefined.
    #[error("integrability check failed for the restitution model: {detail}")]
    IntegrabilityFailure { detail: String },

    /// The iteration did not close the bracket within the iteration budget.
    #[error("iteration did not converge: gap {gap:.6e} after {iterations} iterations (tol {tol:.1e})")]
    ConvergenceFailure {
        gap: f64,
        iterations: usize,
        tol: f64,
    },

    /// The lower/upper ordering was violated beyond the interpolation slack.
    /// This indicates an internal inconsistency, not bad input.
    #[error("monotone ordering violated by {violation:.3e} at iteration {iteration} ({context})")]
    MonotonicityViolation {
        violation: f64,
        iteration: usize,
        context: String,
    },

    #[error("unsupported dimension {0}; only 2 and 3 are available")]
    UnsupportedDimension(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("scenario parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
