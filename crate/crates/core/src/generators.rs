//! Seeded synthetic CPD benchmark problems.
//!
//! All generators are deterministic in their seed and attach the exact
//! Kruskal operand that produced the clean tensor whenever one exists.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::kruskal::KruskalOperand;
use crate::tensor::DenseTensor;
use crate::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    /// The tensor handed to the solver (noisy when noise was added).
    pub tensor: DenseTensor,
    pub clean_tensor: DenseTensor,
    pub ground_truth: Option<KruskalOperand>,
    /// Extra tensor some generators produce (the rank-2 member of the
    /// border-rank sequence).
    pub auxiliary: Option<DenseTensor>,
    pub metadata: InstanceMetadata,
}

impl ProblemInstance {
    fn from_truth(truth: KruskalOperand, generator: &str, params: &[(&str, f64)], seed: u64) -> Result<Self> {
        let clean = truth.to_full();
        Self::new(clean.clone(), clean, Some(truth), None, meta(generator, params, seed))
    }

    /// Checks that the ground truth reproduces the clean tensor.
    pub fn new(
        tensor: DenseTensor,
        clean_tensor: DenseTensor,
        ground_truth: Option<KruskalOperand>,
        auxiliary: Option<DenseTensor>,
        metadata: InstanceMetadata,
    ) -> Result<Self> {
        if tensor.dims() != clean_tensor.dims() {
            return Err(CpdError::Shape("tensor and clean tensor differ in shape".into()));
        }
        if let Some(gt) = &ground_truth {
            let diff = clean_tensor.sub(&gt.to_full())?.norm();
            if diff > 1e-12 * clean_tensor.norm().max(1.0) {
                return Err(CpdError::Numerical {
                    iteration: 0,
                    message: format!("ground truth misses clean tensor by {diff:e}"),
                });
            }
        }
        Ok(Self {
            tensor,
            clean_tensor,
            ground_truth,
            auxiliary,
            metadata,
        })
    }

    /// Replaces `tensor` by `clean_tensor + nu * N`.
    pub fn with_noise(mut self, nu: f64, seed: u64) -> Result<Self> {
        self.tensor = add_noise(&self.clean_tensor, nu, seed)?;
        self.metadata.params.insert("nu".into(), nu);
        self.metadata.params.insert("noise_seed".into(), seed as f64);
        Ok(self)
    }

    /// Relative error of a candidate against the clean tensor.
    pub fn clean_rel_error(&self, k: &KruskalOperand) -> Result<f64> {
        Ok(self.clean_tensor.sub(&k.to_full())?.norm() / self.clean_tensor.norm())
    }
}

fn meta(generator: &str, params: &[(&str, f64)], seed: u64) -> InstanceMetadata {
    InstanceMetadata {
        generator: generator.into(),
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        seed,
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `R` orthonormal columns from the QR factorization of a Gaussian matrix.
fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    gaussian(rows, cols, rng).qr().q()
}

fn check_rank(dims: &[usize], rank: usize) -> Result<()> {
    if rank == 0 {
        return Err(CpdError::Parameter("rank must be at least 1".into()));
    }
    if let Some(&d) = dims.iter().find(|&&d| d < rank) {
        return Err(CpdError::Parameter(format!(
            "rank {rank} exceeds dimension {d}; need R <= min(dims)"
        )));
    }
    Ok(())
}

fn check_c(c: f64) -> Result<()> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(CpdError::Parameter(format!("collinearity c must be finite and >= 0, got {c}")));
    }
    Ok(())
}

/// Column `i` becomes `q_1 + c q_i`, so columns `i, j >= 2` meet at cosine
/// `1 / (1 + c^2)` and column 1 is `(1 + c) q_1`.
fn collinear_columns(q: &Matrix, c: f64, count: usize) -> Matrix {
    let mut x = q.clone();
    for i in 0..count {
        let col = q.column(0) + q.column(i) * c;
        x.set_column(i, &col);
    }
    x
}

/// Gaussian factors; generically well conditioned when `R` is small
/// compared to the dimensions.
pub fn random_instance(dims: &[usize], rank: usize, seed: u64) -> Result<ProblemInstance> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(CpdError::Shape(format!("invalid dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = KruskalOperand::random_gaussian(dims, rank, &mut rng)?;
    ProblemInstance::from_truth(truth, "random", &[("rank", rank as f64)], seed)
}

/// Every column of every factor is collinear with a fixed pivot column.
pub fn collinear_instance(m: usize, n: usize, p: usize, rank: usize, c: f64, seed: u64) -> Result<ProblemInstance> {
    check_rank(&[m, n, p], rank)?;
    check_c(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = [m, n, p]
        .iter()
        .map(|&d| collinear_columns(&orthonormal(d, rank, &mut rng), c, rank))
        .collect();
    let truth = KruskalOperand::new(factors)?;
    ProblemInstance::from_truth(truth, "collinear", &[("rank", rank as f64), ("c", c)], seed)
}

/// Only the first two columns of each factor are collinear; the rest are
/// orthonormal.
pub fn bottleneck_instance(m: usize, n: usize, p: usize, rank: usize, c: f64, seed: u64) -> Result<ProblemInstance> {
    if rank < 2 {
        return Err(CpdError::Parameter(format!("bottleneck needs rank >= 2, got {rank}")));
    }
    check_rank(&[m, n, p], rank)?;
    check_c(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = [m, n, p]
        .iter()
        .map(|&d| collinear_columns(&orthonormal(d, rank, &mut rng), c, 2))
        .collect();
    let truth = KruskalOperand::new(factors)?;
    ProblemInstance::from_truth(truth, "bottleneck", &[("rank", rank as f64), ("c", c)], seed)
}

/// The rank-3 tensor `x1 x2 y3 + x1 y2 x3 + y1 x2 x3` (size `m^3`), which is a
/// limit of the rank-2 tensors
/// `T_k = k (x1 + y1/k)(x2 + y2/k)(x3 + y3/k) - k x1 x2 x3`.
///
/// `tensor` holds the limit with its rank-3 decomposition as ground truth;
/// `auxiliary` holds `T_k`.
pub fn border_rank_instance(m: usize, k: f64, seed: u64) -> Result<ProblemInstance> {
    if !(k.is_finite() && k > 0.0) {
        return Err(CpdError::Parameter(format!("k must be positive and finite, got {k}")));
    }
    if m < 2 {
        return Err(CpdError::Parameter(format!("need m >= 2 for independent pairs, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<Matrix> = (0..3).map(|_| orthonormal(m, 2, &mut rng)).collect();
    let x = |i: usize| pairs[i].column(0).into_owned();
    let y = |i: usize| pairs[i].column(1).into_owned();
    let cols = |a: [nalgebra::DVector<f64>; 3]| Matrix::from_columns(&a);
    let truth = KruskalOperand::new(vec![
        cols([x(0), x(0), y(0)]),
        cols([x(1), y(1), x(1)]),
        cols([y(2), x(2), x(2)]),
    ])?;
    let tk = KruskalOperand::new(
        (0..3)
            .map(|i| {
                let lead = if i == 0 { k } else { 1.0 };
                let trail = if i == 0 { -k } else { 1.0 };
                Matrix::from_columns(&[(x(i) + y(i) / k) * lead, x(i) * trail])
            })
            .collect(),
    )?;
    let clean = truth.to_full();
    ProblemInstance::new(
        clean.clone(),
        clean,
        Some(truth),
        Some(tk.to_full()),
        meta("border_rank", &[("m", m as f64), ("k", k)], seed),
    )
}

/// Tensor of `N x N` matrix multiplication in column-stacked coordinates:
/// contracting it with `vec(A)` and `vec(B)` in the first two modes yields
/// `vec(A B)`. The ground truth is the `N^3`-term standard algorithm.
pub fn matmul_tensor(n: usize) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(CpdError::Parameter("N must be at least 1".into()));
    }
    let nn = n * n;
    let r = n * n * n;
    let mut a = Matrix::zeros(nn, r);
    let mut b = Matrix::zeros(nn, r);
    let mut c = Matrix::zeros(nn, r);
    let mut col = 0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                a[(i + j * n, col)] = 1.0;
                b[(j + k * n, col)] = 1.0;
                c[(i + k * n, col)] = 1.0;
                col += 1;
            }
        }
    }
    let truth = KruskalOperand::new(vec![a, b, c])?;
    ProblemInstance::from_truth(truth, "matmul", &[("n", n as f64)], 0)
}

/// `t + nu * N` with i.i.d. standard normal `N`.
pub fn add_noise(t: &DenseTensor, nu: f64, seed: u64) -> Result<DenseTensor> {
    if !(nu.is_finite() && nu >= 0.0) {
        return Err(CpdError::Parameter(format!("noise level must be finite and >= 0, got {nu}")));
    }
    if nu == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = t.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += nu * z;
    }
    Ok(out)
}
