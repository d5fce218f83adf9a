//! Damped Gauss-Newton for the rank-`R` CPD problem
//! `min_w F(w) = 1/2 ||T - (W_1, ..., W_L) · I||^2`.
//!
//! Each outer step solves `(J^T J + mu D) x = -grad F` approximately with a
//! preconditioned conjugate gradient that only applies `J^T J` through the
//! Gram-block formulas in [`gram`], then accepts or rejects `w + x` depending
//! on whether the error went down.

mod cg;
mod damping;
mod driver;
pub mod gram;
mod options;

pub use cg::{cg_solve, CgOptions, CgSolution};
pub use damping::{gain_ratio, update_mu, DampingRule, DampingSchedule};
pub use driver::{
    enforce_symmetry, restart_rng, solve_cpd, solve_multistart, IterationRecord, MultiStartReport,
    PreparedProblem, RunSummary, SolveReport, Termination,
};
pub use gram::{gram_cache, gram_matvec, jtj_diagonal, regularizer_diag, GramCache};
pub use options::SolverOptions;

use crate::error::{CpdError, Result};
use crate::kruskal::{mttkrp, KruskalOperand};
use crate::tensor::DenseTensor;

fn check_dims(t: &DenseTensor, k: &KruskalOperand) -> Result<()> {
    if t.dims() != k.dims().as_slice() {
        return Err(CpdError::Shape(format!(
            "operand dims {:?} do not match tensor dims {:?}",
            k.dims(),
            t.dims()
        )));
    }
    Ok(())
}

/// `f(w) = T - to_full(w)` as a tensor.
pub fn residual(t: &DenseTensor, k: &KruskalOperand) -> Result<DenseTensor> {
    check_dims(t, k)?;
    t.sub(&k.to_full())
}

/// `F(w) = 1/2 ||f(w)||^2`.
pub fn objective(t: &DenseTensor, k: &KruskalOperand) -> Result<f64> {
    Ok(0.5 * residual(t, k)?.norm().powi(2))
}

/// `grad F = J^T f` in flat parameter layout.
pub fn gradient(t: &DenseTensor, k: &KruskalOperand) -> Result<Vec<f64>> {
    Ok(gradient_from_residual(&residual(t, k)?, k))
}

/// Block `l` of the gradient is `-MTTKRP(f, l)`.
pub(crate) fn gradient_from_residual(f: &DenseTensor, k: &KruskalOperand) -> Vec<f64> {
    let mut g = Vec::with_capacity(k.num_params());
    for mode in 0..k.order() {
        let block = mttkrp(f, k.factors(), mode);
        g.extend(block.as_slice().iter().map(|x| -x));
    }
    g
}
