use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("system is unobservable: observability rank {rank} < {n_x} at depth {n_x}")]
    Unobservable { rank: usize, n_x: usize },
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("matrix is not a generalized inverse: relative residual {residual:.3e} exceeds {tol:.1e}")]
    NotGeneralizedInverse { residual: f64, tol: f64 },
    #[error("inconsistent right-hand side: relative residual {residual:.3e} exceeds {tol:.1e}")]
    Inconsistent { residual: f64, tol: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("semidefinite program is ill-formed: {0}")]
    IllFormed(String),
    #[error("no stabilizing gain found: {0}")]
    NoStabilizingGain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("design failed ({status:?}): {reason}")]
    DesignFailed {
        status: crate::realization::SolverStatus,
        reason: String,
        report: Box<crate::realization::DesignReport>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}
