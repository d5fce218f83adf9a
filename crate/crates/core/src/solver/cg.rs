//! Preconditioned conjugate gradient on `(J^T J + mu D) x = b`.
//!
//! The matrix is only touched through [`gram_matvec`]; `D` doubles as the
//! (diagonal) preconditioner.

use super::gram::{gram_matvec, GramCache};
use crate::error::{CpdError, Result};
use crate::kruskal::KruskalOperand;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop once `||r|| <= rel_tol * ||b||`.
    pub rel_tol: f64,
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub step: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn non_finite(iteration: usize, what: &str) -> CpdError {
    CpdError::Numerical {
        iteration,
        message: format!("conjugate gradient produced a non-finite {what}"),
    }
}

pub fn cg_solve(
    cache: &GramCache,
    k: &KruskalOperand,
    mu: f64,
    d: &[f64],
    b: &[f64],
    opts: &CgOptions,
) -> Result<CgSolution> {
    let n = k.num_params();
    if b.len() != n || d.len() != n {
        return Err(CpdError::Shape(format!(
            "right-hand side {} / diagonal {} for {n} parameters",
            b.len(),
            d.len()
        )));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(CpdError::Parameter(format!("damping must be positive and finite, got {mu}")));
    }
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let mut out = gram_matvec(cache, k, v)?;
        for ((o, vi), di) in out.iter_mut().zip(v).zip(d) {
            *o += mu * di * vi;
        }
        Ok(out)
    };

    let b_norm = dot(b, b).sqrt();
    if !b_norm.is_finite() {
        return Err(non_finite(0, "right-hand side"));
    }
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            step: x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(d).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    let mut iters = 0;
    while iters < opts.max_iters && rel > opts.rel_tol {
        let q = apply(&p)?;
        let pq = dot(&p, &q);
        if !pq.is_finite() {
            return Err(non_finite(iters + 1, "curvature"));
        }
        if pq <= 0.0 {
            break;
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iters += 1;
        rel = dot(&r, &r).sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(non_finite(iters, "residual"));
        }
        for i in 0..n {
            z[i] = r[i] / d[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgSolution {
        step: x,
        iterations: iters,
        rel_residual: rel,
    })
}
