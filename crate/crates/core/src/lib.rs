//! Non-negative matrix factorisation with relative pairwise relationship
//! constraints of the form `dis(x_q, x_r) < dis(x_q, x_s)` on rows of W or
//! columns of H.

pub mod constraints;
pub mod error;
pub mod experiments;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod penalties;
pub mod solver;

pub use constraints::{ConstraintSet, ConstraintTriple, Constraints, Measure, Target};
pub use error::{Error, Result};
pub use matrix::{DenseMatrix, MaskMatrix, EPS};
pub use solver::{run, FactorisationReport, SolverConfig, SolverState};
