//! Error type shared across the crate.

/// Errors raised by model construction, estimation and process evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid arguments or malformed input data.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A Γ- or C-matrix is (numerically) singular at the given time.
    #[error("singular matrix at t = {t}: {detail}")]
    Singular { t: f64, detail: String },

    /// Residuals fell beyond the Γ-singularity guard; the transformed path
    /// cannot be evaluated through their atoms.
    #[error("{0} residual(s) beyond the singularity guard: {1:?}")]
    GuardExceeded(usize, Vec<f64>),

    /// The estimating-equation solver failed to reach the gradient tolerance.
    #[error("no convergence after {iterations} iterations, |eq| = {equation_norm:.3e}")]
    NonConvergence {
        iterations: usize,
        equation_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// Degenerate configuration (zero scale, zero projection weight, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    /// The CLI maps these to exit code 2, everything else to 3.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
