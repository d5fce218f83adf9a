//! Dense canonical polyadic decomposition (CPD).
//!
//! The engine compresses the input with a truncated multilinear SVD, fits a
//! rank-`R` Kruskal operand in the compressed space with a damped Gauss-Newton
//! iteration whose normal equations are solved by a matrix-free conjugate
//! gradient, and maps the result back to the original space.
//!
//! Besides the solver the crate ships seeded synthetic problem generators, a
//! method-of-moments learner for Gaussian mixtures with orthonormal means, and
//! plain-text / binary tensor files plus JSON run reports.

pub mod error;
pub mod exec;
pub mod generators;
pub mod gmm;
pub mod io;
pub mod kruskal;
pub mod mlsvd;
pub mod solver;
pub mod tensor;

pub use error::{CpdError, Result};
pub use exec::Execution;
pub use kruskal::KruskalOperand;
pub use mlsvd::{compute_mlsvd, decompress_cpd, multilinear_rank, truncate, MlsvdResult};
pub use solver::{solve_cpd, solve_multistart, SolveReport, SolverOptions};
pub use tensor::DenseTensor;

/// Column-major dense matrix used for factor matrices throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
