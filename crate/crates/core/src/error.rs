use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A user callback returned a non-finite value or an object of the wrong shape.
    #[error("evaluation of {what} failed at x = {point:?}: {detail}")]
    Evaluation {
        what: &'static str,
        point: Vec<f64>,
        detail: String,
    },

    /// Caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The factorization has zero pivots and cannot be used to solve.
    #[error("matrix is singular (inertia {positive}+/{negative}-/{zero}0)")]
    Singular {
        positive: usize,
        negative: usize,
        zero: usize,
    },

    /// Inertia correction could not make the Newton matrix positive definite.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// Backtracking shrank the step below the floor without satisfying the acceptance test.
    #[error("line search failed: step fell below {floor:e}")]
    LineSearch { floor: f64 },

    /// Operation needs a finite box.
    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
