use thiserror::Error;

/// Errors raised while building or evaluating port-Hamiltonian objects.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PhsError {
    #[error("{field}: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("{context}: expected dimension {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("boundary rows are expected in {expected} form")]
    WrongBoundaryForm { expected: &'static str },

    #[error("singular boundary closure: {0}")]
    SingularClosure(String),

    #[error("linear solve failed: {0}")]
    Factorization(String),

    #[error("non-finite value detected at step {step}")]
    NonFinite { step: usize },

    #[error("diagonalization failed at zeta = {zeta}: {reason}")]
    Diagonalization { zeta: f64, reason: String },

    #[error("transfer propagation failed at zeta = {zeta}: {reason}")]
    Transfer { zeta: f64, reason: String },

    #[error("not an eigenvalue at tolerance (smallest singular value {sigma_min:e})")]
    NotAnEigenvalue { sigma_min: f64 },

    #[error("{0}")]
    Dirac(String),
}

impl PhsError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        PhsError::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        PhsError::Dimension {
            context: context.into(),
            expected,
            found,
        }
    }
}

pub type Result<T, E = PhsError> = std::result::Result<T, E>;
