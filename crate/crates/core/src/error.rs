use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("controller is not causal: {0}")]
    NonCausal(String),
    #[error("subspace is not certified sparsity preserving: {0}")]
    Uncertified(String),
    #[error("solver returned status {0}")]
    SolverStatus(gss_qp::SolverStatus),
    #[error(transparent)]
    Solver(#[from] gss_qp::QpError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Dimension(msg.into()))
}
