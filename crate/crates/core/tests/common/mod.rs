//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use cpd_core::solver::{gram_cache, gram_matvec, regularizer_diag};
use cpd_core::{DenseTensor, KruskalOperand, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_operand(dims: &[usize], rank: usize, seed: u64) -> KruskalOperand {
    KruskalOperand::random_gaussian(dims, rank, &mut rng(seed)).unwrap()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Derivative of `vec(to_full(k))` (row-major) with respect to the flat
/// parameters, entry by entry: the partial of `t[idx]` with respect to
/// `W_l[i, r]` is `prod_{k != l} W_k[idx_k, r]` when `idx_l == i`, else 0.
/// The residual Jacobian is its negative.
pub fn dense_model_jacobian(k: &KruskalOperand) -> Matrix {
    let dims = k.dims();
    let total: usize = dims.iter().product();
    let offsets = k.block_offsets();
    let mut jac = Matrix::zeros(total, k.num_params());
    let mut idx = vec![0usize; dims.len()];
    for row in 0..total {
        let mut rem = row;
        for l in (0..dims.len()).rev() {
            idx[l] = rem % dims[l];
            rem /= dims[l];
        }
        for l in 0..dims.len() {
            for r in 0..k.rank() {
                let mut p = 1.0;
                for (m, f) in k.factors().iter().enumerate() {
                    if m != l {
                        p *= f[(idx[m], r)];
                    }
                }
                jac[(row, offsets[l] + r * dims[l] + idx[l])] = p;
            }
        }
    }
    jac
}

pub fn dense_jtj(k: &KruskalOperand) -> Matrix {
    let j = dense_model_jacobian(k);
    j.tr_mul(&j)
}

/// `J^T J` assembled column by column from the matrix-free product.
pub fn jtj_from_matvec(k: &KruskalOperand) -> Matrix {
    let cache = gram_cache(k);
    let n = k.num_params();
    let mut m = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = gram_matvec(&cache, k, &e).unwrap();
        m.set_column(j, &nalgebra::DVector::from_vec(col));
        e[j] = 0.0;
    }
    m
}

pub fn regularizer(k: &KruskalOperand) -> Vec<f64> {
    regularizer_diag(&gram_cache(k), k)
}

pub fn vec_of(t: &DenseTensor) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(t.data())
}

/// Central-difference gradient of `1/2 ||t - to_full(w)||^2`.
pub fn finite_difference_gradient(t: &DenseTensor, k: &KruskalOperand, h: f64) -> Vec<f64> {
    let w = k.to_vec();
    let dims = k.dims();
    let f = |v: &[f64]| {
        let kk = KruskalOperand::from_vec(&dims, k.rank(), v).unwrap();
        0.5 * t.sub(&kk.to_full()).unwrap().norm().powi(2)
    };
    let mut g = vec![0.0; w.len()];
    let mut wp = w.clone();
    for i in 0..w.len() {
        wp[i] = w[i] + h;
        let fp = f(&wp);
        wp[i] = w[i] - h;
        let fm = f(&wp);
        wp[i] = w[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
