use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("{what} has shape {found:?}, expected {expected:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("problem data contains NaN or infinite entries")]
    NonFinite,
    #[error("objective Hessian is not positive semidefinite")]
    NotPsd,
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("linear system factorization failed: {0}")]
    Factorization(String),
}
