use thiserror::Error;

pub type Result<T> = std::result::Result<T, KfsError>;

/// Errors surfaced by the library. The CLI maps these onto exit codes:
/// anything input-shaped exits 2, solver failures exit 3.
#[derive(Debug, Error)]
pub enum KfsError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Factorization failure after the jitter ladder was exhausted.
    #[error("solver failure in {stage}: {detail} (jitter attempts {attempts}, last jitter {last_jitter:.3e})")]
    Solver {
        stage: &'static str,
        attempts: usize,
        last_jitter: f64,
        detail: String,
    },

    /// The descent step kept increasing the objective after the allowed
    /// number of stepsize halvings.
    #[error("non-monotone descent after {halvings} stepsize halvings (objective {from} -> {to})")]
    NonMonotone { halvings: usize, from: f64, to: f64 },
}

impl KfsError {
    pub fn domain(msg: impl Into<String>) -> Self {
        KfsError::Domain(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        KfsError::DimensionMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        KfsError::InvalidArgument(msg.into())
    }

    /// True when the error came out of the numeric solve rather than
    /// input validation.
    pub fn is_solver(&self) -> bool {
        matches!(self, KfsError::Solver { .. } | KfsError::NonMonotone { .. })
    }
}
