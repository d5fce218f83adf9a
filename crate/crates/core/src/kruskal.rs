//! Kruskal operands `(W_1, ..., W_L) · I_R`, the CPD candidates.
//!
//! The flat parameter vector stacks the columns of each factor (column-major
//! `vec`) and concatenates the factors in mode order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::tensor::{split_dims, DenseTensor};
use crate::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KruskalOperand {
    factors: Vec<Matrix>,
}

impl KruskalOperand {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let rank = match factors.first() {
            Some(f) => f.ncols(),
            None => return Err(CpdError::Shape("operand needs at least one factor".into())),
        };
        if rank == 0 {
            return Err(CpdError::Parameter("rank must be at least 1".into()));
        }
        for (l, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(CpdError::Shape(format!(
                    "factor {l} has {} columns, expected {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(CpdError::Shape(format!("factor {l} has no rows")));
            }
        }
        Ok(Self { factors })
    }

    /// Factors with i.i.d. standard Gaussian entries.
    pub fn random_gaussian<R: Rng + ?Sized>(dims: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        let factors = dims
            .iter()
            .map(|&d| Matrix::from_fn(d, rank, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::new(factors)
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    /// Length of the flat parameter vector, `R * sum(I_l)`.
    pub fn num_params(&self) -> usize {
        self.factors.iter().map(|f| f.len()).sum()
    }

    /// Offsets of each factor block inside the flat parameter vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.order() + 1);
        let mut acc = 0;
        offsets.push(0);
        for f in &self.factors {
            acc += f.len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for f in &self.factors {
            v.extend_from_slice(f.as_slice());
        }
        v
    }

    pub fn from_vec(dims: &[usize], rank: usize, w: &[f64]) -> Result<Self> {
        let need: usize = dims.iter().sum::<usize>() * rank;
        if w.len() != need {
            return Err(CpdError::Shape(format!(
                "parameter vector has length {}, expected {need}",
                w.len()
            )));
        }
        let mut start = 0;
        let factors = dims
            .iter()
            .map(|&d| {
                let m = Matrix::from_column_slice(d, rank, &w[start..start + d * rank]);
                start += d * rank;
                m
            })
            .collect();
        Self::new(factors)
    }

    /// `self + alpha * step` with `step` in flat parameter layout.
    pub fn axpy(&self, alpha: f64, step: &[f64]) -> Result<Self> {
        if step.len() != self.num_params() {
            return Err(CpdError::Shape(format!(
                "step has length {}, expected {}",
                step.len(),
                self.num_params()
            )));
        }
        let mut start = 0;
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for (x, s) in g.as_mut_slice().iter_mut().zip(&step[start..start + f.len()]) {
                    *x += alpha * s;
                }
                start += f.len();
                g
            })
            .collect();
        Ok(Self { factors })
    }

    /// Norm of the flat parameter vector.
    pub fn param_norm(&self) -> f64 {
        self.factors.iter().map(|f| f.norm_squared()).sum::<f64>().sqrt()
    }

    /// `prod_l ||w_r^(l)||` for each rank-one term `r`.
    pub fn term_norms(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|r| self.factors.iter().map(|f| f.column(r).norm()).product())
            .collect()
    }

    /// Evaluates `sum_r w_r^(1) ⊗ ... ⊗ w_r^(L)`.
    pub fn to_full(&self) -> DenseTensor {
        let rank = self.rank();
        let refs: Vec<&Matrix> = self.factors.iter().collect();
        let rows = row_products(&refs, rank);
        let data = rows.chunks_exact(rank).map(|c| c.iter().sum()).collect();
        DenseTensor::new(self.dims(), data).expect("factor shapes validated at construction")
    }

    pub(crate) fn from_factors_unchecked(factors: Vec<Matrix>) -> Self {
        Self { factors }
    }
}

/// Row-wise Khatri-Rao products.
///
/// Returns a row-major `prod(rows) x rank` array whose row for the multi-index
/// `(i_1, ..., i_k)` (first factor slowest) holds `prod_j F_j[i_j, r]`.
/// An empty factor list yields a single row of ones.
pub(crate) fn row_products(factors: &[&Matrix], rank: usize) -> Vec<f64> {
    let mut acc = vec![1.0; rank];
    for f in factors {
        let n = f.nrows();
        let mut next = Vec::with_capacity(acc.len() * n);
        for row in acc.chunks_exact(rank) {
            for i in 0..n {
                next.extend(row.iter().enumerate().map(|(r, &a)| a * f[(i, r)]));
            }
        }
        acc = next;
    }
    acc
}

/// Matricized tensor times Khatri-Rao product for one mode:
/// `G[i, r] = sum over all other indices of t[.., i, ..] * prod_{k != mode} W_k[i_k, r]`.
pub(crate) fn mttkrp(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Matrix {
    let rank = factors[0].ncols();
    let (left, mid, right) = split_dims(t.dims(), mode);
    let left_refs: Vec<&Matrix> = factors[..mode].iter().collect();
    let right_refs: Vec<&Matrix> = factors[mode + 1..].iter().collect();
    let pl = row_products(&left_refs, rank);
    let pr = row_products(&right_refs, rank);
    let data = t.data();
    let mut g = Matrix::zeros(mid, rank);
    let mut tmp = vec![0.0; rank];
    for a in 0..left {
        let pl_row = &pl[a * rank..(a + 1) * rank];
        for i in 0..mid {
            tmp.iter_mut().for_each(|x| *x = 0.0);
            let start = (a * mid + i) * right;
            for (b, &v) in data[start..start + right].iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (x, p) in tmp.iter_mut().zip(&pr[b * rank..(b + 1) * rank]) {
                    *x += v * p;
                }
            }
            for r in 0..rank {
                g[(i, r)] += pl_row[r] * tmp[r];
            }
        }
    }
    g
}
