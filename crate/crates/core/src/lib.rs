//! Robust finite-horizon output-feedback synthesis under arbitrary
//! information structures, via disturbance feedback restricted to
//! generalized sparsity subspaces.

pub mod binalg;
pub mod error;
pub mod gss;
pub mod io;
pub mod platoon;
pub mod robust;
pub mod rollout;
pub mod stacked;

pub use binalg::BinMatrix;
pub use error::{CoreError, Result};
pub use gss::GssSpec;
pub use robust::{Certification, CostSpec, DisturbanceSet, QpProblem, SynthesisResult};
pub use stacked::{ConstraintSet, InfoStructure, StackedSystem, SystemModel};
