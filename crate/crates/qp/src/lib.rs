//! Sparse convex quadratic programming. The default method is the alternating
//! direction method of multipliers with active-set polishing of the final
//! iterate; a primal-dual interior-point method is available for degenerate
//! problems on which the first-order iteration stalls.

mod error;
mod ipm;
mod ldlt;
mod problem;
mod settings;
mod solver;
mod sparse;

pub use error::QpError;
pub use problem::QuadraticProgram;
pub use settings::{Method, SolverSettings};
pub use solver::{solve, SolverResult, SolverStatus};
pub use sparse::SparseMatrix;
