//! Structure of the Gauss-Newton matrix `J^T J` for a Kruskal operand.
//!
//! With `omega_l = W_l^T W_l`, the block of `J^T J` coupling factor `a` with
//! factor `b` is determined by the Hadamard product of the `omega`s of all
//! *other* modes. For `a == b` that block is `Pi_aa ⊗̃ I` with
//! `Pi_aa = *_{l != a} omega_l`; for `a != b` the `(r', r'')` sub-block is
//! `Pi_ab[r', r''] * w_{r''}^(a) (w_{r'}^(b))^T` with
//! `Pi_ab = *_{l not in {a, b}} omega_l`. For order 3 these are the six
//! matrices `Pi_X, Pi_Y, Pi_Z, Pi_XY, Pi_XZ, Pi_YZ`.
//!
//! Everything is stored as `R x R` matrices, so memory is `O(L^2 R^2)` and
//! `J^T J v` costs `O(R^2 sum(I_l) + L^2 R^2)`.

use crate::error::{CpdError, Result};
use crate::kruskal::KruskalOperand;
use crate::Matrix;

#[derive(Clone, Debug)]
pub struct GramCache {
    order: usize,
    rank: usize,
    omegas: Vec<Matrix>,
    /// Upper triangle (`a <= b`) of the `Pi_ab` tables, row-major.
    pis: Vec<Matrix>,
}

fn tri_index(order: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * order - a * (a + 1) / 2 + b
}

impl GramCache {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `W_l^T W_l`.
    pub fn omega(&self, mode: usize) -> &Matrix {
        &self.omegas[mode]
    }

    /// `Pi_ab`; symmetric in `(a, b)`.
    pub fn pi(&self, a: usize, b: usize) -> &Matrix {
        &self.pis[tri_index(self.order, a, b)]
    }

    /// Order-3 names. Panics for other orders.
    pub fn pi_x(&self) -> &Matrix {
        self.order3(0, 0)
    }
    pub fn pi_y(&self) -> &Matrix {
        self.order3(1, 1)
    }
    pub fn pi_z(&self) -> &Matrix {
        self.order3(2, 2)
    }
    pub fn pi_xy(&self) -> &Matrix {
        self.order3(0, 1)
    }
    pub fn pi_xz(&self) -> &Matrix {
        self.order3(0, 2)
    }
    pub fn pi_yz(&self) -> &Matrix {
        self.order3(1, 2)
    }

    fn order3(&self, a: usize, b: usize) -> &Matrix {
        assert_eq!(self.order, 3, "named Pi tables exist only for order 3");
        self.pi(a, b)
    }

    /// Number of floats held by the cache.
    pub fn stored_floats(&self) -> usize {
        (self.omegas.len() + self.pis.len()) * self.rank * self.rank
    }
}

pub fn gram_cache(k: &KruskalOperand) -> GramCache {
    let order = k.order();
    let rank = k.rank();
    let omegas: Vec<Matrix> = k.factors().iter().map(|w| w.tr_mul(w)).collect();
    let mut pis = Vec::with_capacity(order * (order + 1) / 2);
    for a in 0..order {
        for b in a..order {
            let mut pi = Matrix::from_element(rank, rank, 1.0);
            for (l, om) in omegas.iter().enumerate() {
                if l != a && l != b {
                    pi.component_mul_assign(om);
                }
            }
            pis.push(pi);
        }
    }
    GramCache {
        order,
        rank,
        omegas,
        pis,
    }
}

fn check_len(k: &KruskalOperand, len: usize) -> Result<()> {
    if len != k.num_params() {
        return Err(CpdError::Shape(format!(
            "vector has length {len}, operand has {} parameters",
            k.num_params()
        )));
    }
    Ok(())
}

/// `J^T J v` without forming `J^T J`.
pub fn gram_matvec(cache: &GramCache, k: &KruskalOperand, v: &[f64]) -> Result<Vec<f64>> {
    check_len(k, v.len())?;
    let rank = k.rank();
    let offsets = k.block_offsets();
    let blocks: Vec<Matrix> = (0..k.order())
        .map(|l| Matrix::from_column_slice(k.factor(l).nrows(), rank, &v[offsets[l]..offsets[l + 1]]))
        .collect();
    // V_b^T W_b for every mode
    let cross: Vec<Matrix> = blocks
        .iter()
        .zip(k.factors())
        .map(|(vb, wb)| vb.tr_mul(wb))
        .collect();
    let mut out = Vec::with_capacity(v.len());
    for (a, va) in blocks.iter().enumerate() {
        let mut block = va * cache.pi(a, a);
        let mut coupling = Matrix::zeros(rank, rank);
        for b in (0..k.order()).filter(|&b| b != a) {
            coupling += cache.pi(a, b).component_mul(&cross[b]);
        }
        block.gemm(1.0, k.factor(a), &coupling, 1.0);
        out.extend_from_slice(block.as_slice());
    }
    Ok(out)
}

/// Diagonal of `J^T J`: entry `(a, i, r)` equals `Pi_aa[r, r]`.
pub fn jtj_diagonal(cache: &GramCache, k: &KruskalOperand) -> Vec<f64> {
    let mut diag = Vec::with_capacity(k.num_params());
    for a in 0..k.order() {
        let pi = cache.pi(a, a);
        let rows = k.factor(a).nrows();
        for r in 0..k.rank() {
            diag.extend(std::iter::repeat_n(pi[(r, r)], rows));
        }
    }
    diag
}

/// Off-diagonal absolute row sums of `J^T J`.
///
/// Row `(a, i, r')` collects `|Pi_aa[r', r'']|` for `r'' != r'` from its own
/// block and `|Pi_ab[r', r'']| |W_a[i, r'']| ||w_{r'}^(b)||_1` from block `b`.
pub fn jtj_offdiag_row_sums(cache: &GramCache, k: &KruskalOperand) -> Vec<f64> {
    let rank = k.rank();
    let l1: Vec<Vec<f64>> = k
        .factors()
        .iter()
        .map(|w| (0..rank).map(|r| w.column(r).iter().map(|x| x.abs()).sum()).collect())
        .collect();
    let mut sums = Vec::with_capacity(k.num_params());
    for a in 0..k.order() {
        let wa = k.factor(a);
        let own = cache.pi(a, a);
        for r in 0..rank {
            let own_sum: f64 = (0..rank).filter(|&s| s != r).map(|s| own[(r, s)].abs()).sum();
            for i in 0..wa.nrows() {
                let mut acc = own_sum;
                for b in (0..k.order()).filter(|&b| b != a) {
                    let pi = cache.pi(a, b);
                    let inner: f64 = (0..rank).map(|s| pi[(r, s)].abs() * wa[(i, s)].abs()).sum();
                    acc += inner * l1[b][r];
                }
                sums.push(acc);
            }
        }
    }
    sums
}

/// Positive diagonal `D` for the damped system `(J^T J + mu D) x = -grad F`.
///
/// Each entry is the larger of the `J^T J` diagonal and its off-diagonal row
/// sum, which makes `J^T J + D` diagonally dominant. Entries are floored at
/// `1e-12` times the largest entry (and at the smallest normal float).
pub fn regularizer_diag(cache: &GramCache, k: &KruskalOperand) -> Vec<f64> {
    let diag = jtj_diagonal(cache, k);
    let off = jtj_offdiag_row_sums(cache, k);
    let mut d: Vec<f64> = diag.iter().zip(&off).map(|(a, b)| a.max(*b)).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    let floor = (1e-12 * max).max(f64::MIN_POSITIVE);
    d.iter_mut().for_each(|x| *x = x.max(floor));
    d
}
