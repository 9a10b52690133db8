use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: {detail}")]
    Dimension { context: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The information matrix is (numerically) singular, so the parameter
    /// is not identifiable from the data at hand.
    #[error("parameter not identifiable: {reason} (condition number {condition:.3e})")]
    Identifiability { reason: String, condition: f64 },

    #[error("singular jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("no convergence after {iterations} iterations (residual norm {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("{failed} of {total} replicate fits failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn dimension(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { context, detail: detail.into() }
    }
}
