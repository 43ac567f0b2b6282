//! Error type shared across the solver stack.

use crate::clqr::DualAscentOutput;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of matrices/vectors do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A construction-time invariant failed (non-PSD weight, unstabilizable
    /// pair, empty admissible set, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A factorization or conditioning check failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Inconsistent solver state, e.g. dual keys not matching the surrogate set.
    #[error("state error: {0}")]
    State(String),

    /// An obstacle whose curvature certificate does not hold.
    #[error("obstacle {id} is not certified semi-convex: {detail}")]
    Certificate { id: usize, detail: String },

    /// No usable reference point for convexification.
    #[error("reference selection failed: {0}")]
    Reference(String),

    /// Dual ascent hit its iteration cap before the cost settled. Carries the
    /// best iterate so the caller can keep going.
    #[error("dual ascent did not converge within {iterations} iterations (last |dJ| = {last_delta:.3e})")]
    Convergence {
        iterations: usize,
        last_delta: f64,
        best: Box<DualAscentOutput>,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
