//! Method-of-moments learning for Gaussian mixtures with orthonormal means
//! and a shared spherical covariance `sigma^2 I`.
//!
//! For such a mixture the corrected third moment
//! `M3 = E[x x x] - sigma^2 sum_i (mu e_i e_i + e_i mu e_i + e_i e_i mu)`
//! equals `sum_i w_i u_i u_i u_i`, so a symmetric rank-`K` CPD of its
//! empirical estimate yields weights and means directly. `sigma^2` is the
//! smallest eigenvalue of the covariance.

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::exec::{map_indexed, Execution};
use crate::kruskal::KruskalOperand;
use crate::solver::{solve_cpd, SolveReport, SolverOptions};
use crate::tensor::DenseTensor;
use crate::Matrix;

/// Samples per block when accumulating moments.
const MOMENT_BLOCK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `d x K`, one mean per column.
    pub means: Matrix,
    pub variance: f64,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Matrix, variance: f64) -> Result<Self> {
        let m = Self {
            weights,
            means,
            variance,
        };
        m.validate()?;
        Ok(m)
    }

    /// Positive weights summing to one, orthonormal means, `K <= d`, `sigma^2 >= 0`.
    pub fn validate(&self) -> Result<()> {
        let k = self.components();
        if k == 0 || self.weights.len() != k {
            return Err(CpdError::Shape(format!(
                "{} weights for {k} mean columns",
                self.weights.len()
            )));
        }
        if k > self.dim() {
            return Err(CpdError::Parameter(format!("K = {k} exceeds d = {}", self.dim())));
        }
        if self.weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(CpdError::Parameter("weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CpdError::Parameter(format!("weights sum to {total}, expected 1")));
        }
        let gram = self.means.tr_mul(&self.means);
        if (gram - Matrix::identity(k, k)).norm() > 1e-10 {
            return Err(CpdError::Parameter("means must be orthonormal".into()));
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(CpdError::Parameter(format!("variance must be >= 0, got {}", self.variance)));
        }
        Ok(())
    }

    /// Random orthonormal means and weights drawn uniformly from `[1, 2]`
    /// then normalized.
    pub fn random(d: usize, k: usize, variance: f64, seed: u64) -> Result<Self> {
        if k == 0 || k > d {
            return Err(CpdError::Parameter(format!("need 1 <= K <= d, got K = {k}, d = {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Matrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
        let means = g.qr().q();
        let unif = Uniform::new(1.0, 2.0).expect("valid range");
        let raw: Vec<f64> = (0..k).map(|_| unif.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // make the sum exactly 1 up to a single rounding
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;
        Self::new(weights, means, variance)
    }

    pub fn dim(&self) -> usize {
        self.means.nrows()
    }

    pub fn components(&self) -> usize {
        self.means.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    /// `N x d`, one sample per row.
    pub samples: Matrix,
    /// Component each sample came from, when known.
    pub labels: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn from_samples(samples: Matrix) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(CpdError::Shape("sample matrix is empty".into()));
        }
        Ok(Self {
            samples,
            labels: None,
            seed: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }
}

/// Draws `n` samples: pick component `h` with probability `w_h`, then
/// `x = u_h + z` with `z ~ N(0, sigma^2 I)`.
pub fn sample(model: &GmmModel, n: usize, seed: u64) -> Result<SampleSet> {
    model.validate()?;
    if n == 0 {
        return Err(CpdError::Parameter("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&model.weights)
        .map_err(|e| CpdError::Parameter(format!("invalid weights: {e}")))?;
    let sigma = model.variance.sqrt();
    let d = model.dim();
    let mut samples = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let h = pick.sample(&mut rng);
        labels.push(h);
        for i in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            samples[(s, i)] = model.means[(i, h)] + sigma * z;
        }
    }
    Ok(SampleSet {
        samples,
        labels: Some(labels),
        seed: Some(seed),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Biased covariance `1/N sum (x x^T - mu mu^T)`.
    pub covariance: Matrix,
    pub variance: f64,
    /// Corrected third moment, exactly symmetric.
    pub third: DenseTensor,
}

/// Packed index of `a <= b <= c` inside the upper "tetrahedron".
fn packed_triples(d: usize) -> Vec<(usize, usize, usize)> {
    let mut v = Vec::new();
    for a in 0..d {
        for b in a..d {
            for c in b..d {
                v.push((a, b, c));
            }
        }
    }
    v
}

struct BlockSums {
    first: Vec<f64>,
    second: Matrix,
    third: Vec<f64>,
}

fn block_sums(s: &Matrix, rows: std::ops::Range<usize>, triples: &[(usize, usize, usize)]) -> BlockSums {
    let d = s.ncols();
    let mut first = vec![0.0; d];
    let mut second = Matrix::zeros(d, d);
    let mut third = vec![0.0; triples.len()];
    let mut x = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            x[i] = s[(r, i)];
            first[i] += x[i];
        }
        for j in 0..d {
            for i in 0..d {
                second[(i, j)] += x[i] * x[j];
            }
        }
        for (acc, &(a, b, c)) in third.iter_mut().zip(triples) {
            *acc += x[a] * x[b] * x[c];
        }
    }
    BlockSums { first, second, third }
}

/// Empirical mean, covariance, noise variance and corrected third moment.
pub fn empirical_moments(s: &SampleSet, exec: Execution) -> Result<Moments> {
    let n = s.len();
    if n < 2 {
        return Err(CpdError::Degenerate(format!("need at least 2 samples, got {n}")));
    }
    if !s.samples.iter().all(|v| v.is_finite()) {
        return Err(CpdError::Degenerate("samples contain non-finite values".into()));
    }
    let d = s.dim();
    let triples = packed_triples(d);
    let blocks = n.div_ceil(MOMENT_BLOCK);
    let parts = map_indexed(blocks, exec, |b| {
        let start = b * MOMENT_BLOCK;
        block_sums(&s.samples, start..(start + MOMENT_BLOCK).min(n), &triples)
    });
    let mut first = vec![0.0; d];
    let mut second = Matrix::zeros(d, d);
    let mut third = vec![0.0; triples.len()];
    for p in parts {
        first.iter_mut().zip(&p.first).for_each(|(a, b)| *a += b);
        second += &p.second;
        third.iter_mut().zip(&p.third).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / n as f64;
    let mean: Vec<f64> = first.iter().map(|v| v * inv).collect();
    let mut covariance = second * inv;
    for j in 0..d {
        for i in 0..d {
            covariance[(i, j)] -= mean[i] * mean[j];
        }
    }
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let variance = covariance
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);

    let mut m3 = DenseTensor::zeros(&[d, d, d]);
    for (&(a, b, c), &raw) in triples.iter().zip(&third) {
        let mut v = raw * inv;
        // corrections sum_i (mu e_i e_i + e_i mu e_i + e_i e_i mu) at (a, b, c)
        if b == c {
            v -= variance * mean[a];
        }
        if a == c {
            v -= variance * mean[b];
        }
        if a == b {
            v -= variance * mean[c];
        }
        for idx in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            m3.set(&idx, v);
        }
    }
    Ok(Moments {
        mean,
        covariance,
        variance,
        third: m3,
    })
}

/// `sum_i w_i u_i u_i^T`.
pub fn exact_second_moment(model: &GmmModel) -> Matrix {
    let mut m = Matrix::zeros(model.dim(), model.dim());
    for (i, &w) in model.weights.iter().enumerate() {
        let u = model.means.column(i);
        m += u * u.transpose() * w;
    }
    m
}

/// `sum_i w_i u_i u_i u_i`.
pub fn exact_third_moment(model: &GmmModel) -> DenseTensor {
    let scaled = model.means.clone() * Matrix::from_diagonal(&nalgebra::DVector::from_vec(model.weights.clone()));
    KruskalOperand::from_factors_unchecked(vec![scaled, model.means.clone(), model.means.clone()]).to_full()
}

/// Writes each term of an order-3 operand as `lambda_r u_r u_r u_r` with
/// `u_r` the normalized first-factor column, `lambda_r = prod_l <w_r^(l), u_r>`,
/// and `lambda_r >= 0` after flipping the sign of `u_r` where needed.
pub fn normalize_terms(k: &KruskalOperand) -> (Vec<f64>, Matrix) {
    let first = k.factor(0);
    let mut u = Matrix::zeros(first.nrows(), k.rank());
    let mut lambdas = Vec::with_capacity(k.rank());
    for r in 0..k.rank() {
        let col = first.column(r);
        let n = col.norm();
        let mut ur = if n > 0.0 { col / n } else { col.into_owned() };
        let mut lambda: f64 = k.factors().iter().map(|f| f.column(r).dot(&ur)).product();
        if lambda < 0.0 && k.order() % 2 == 1 {
            lambda = -lambda;
            ur = -ur;
        }
        u.set_column(r, &ur);
        lambdas.push(lambda);
    }
    (lambdas, u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Term weights before renormalizing to sum one.
    pub raw_weights: Vec<f64>,
    pub cpd: SolveReport,
}

/// Symmetric rank-`K` CPD of a third-moment tensor. The returned model has
/// variance 0; [`learn`] fills in the estimate.
pub fn learn_from_moment(m3: &DenseTensor, k: usize, opts: &SolverOptions) -> Result<GmmFit> {
    let d = m3.dims()[0];
    if m3.order() != 3 || m3.dims().iter().any(|&x| x != d) {
        return Err(CpdError::Shape(format!("expected a d x d x d tensor, got {:?}", m3.dims())));
    }
    if k == 0 || k > d {
        return Err(CpdError::Parameter(format!("need 1 <= K <= d, got K = {k}, d = {d}")));
    }
    let opts = SolverOptions {
        rank: k,
        symmetric: true,
        ..opts.clone()
    };
    let cpd = solve_cpd(m3, &opts)?;
    let (raw_weights, means) = normalize_terms(&cpd.operand);
    let total: f64 = raw_weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(CpdError::Numerical {
            iteration: cpd.iterations(),
            message: "recovered weights do not sum to a positive value".into(),
        });
    }
    let weights = raw_weights.iter().map(|w| w / total).collect();
    Ok(GmmFit {
        model: GmmModel {
            weights,
            means,
            variance: 0.0,
        },
        raw_weights,
        cpd,
    })
}

/// Estimates a `K`-component model from samples. Restarts come from `opts`;
/// [`default_options`] uses 100.
pub fn learn(s: &SampleSet, k: usize, opts: &SolverOptions) -> Result<GmmFit> {
    if k > s.dim() {
        return Err(CpdError::Parameter(format!("K = {k} exceeds d = {}", s.dim())));
    }
    let m = empirical_moments(s, opts.execution)?;
    let mut fit = learn_from_moment(&m.third, k, opts)?;
    fit.model.variance = m.variance;
    Ok(fit)
}

pub fn default_options(k: usize) -> SolverOptions {
    SolverOptions {
        symmetric: true,
        restarts: 100,
        ..SolverOptions::new(k)
    }
}

/// Greedy matching of estimated to true mean columns by largest `|cos|`.
/// Returns, per true column, the estimated column and the sign aligning it.
pub fn align(est: &GmmModel, truth: &GmmModel) -> Result<Vec<(usize, f64)>> {
    let k = truth.components();
    if est.components() != k || est.dim() != truth.dim() || est.weights.len() != k {
        return Err(CpdError::Shape(format!(
            "estimate has d = {}, K = {}; truth has d = {}, K = {k}",
            est.dim(),
            est.components(),
            truth.dim()
        )));
    }
    let mut cos = Vec::with_capacity(k * k);
    for t in 0..k {
        for e in 0..k {
            let a = est.means.column(e);
            let b = truth.means.column(t);
            let denom = a.norm() * b.norm();
            let c = if denom > 0.0 { a.dot(&b) / denom } else { 0.0 };
            cos.push((t, e, c));
        }
    }
    cos.sort_by(|x, y| y.2.abs().total_cmp(&x.2.abs()).then((x.0, x.1).cmp(&(y.0, y.1))));
    let mut map = vec![None; k];
    let mut used = vec![false; k];
    for (t, e, c) in cos {
        if map[t].is_none() && !used[e] {
            map[t] = Some((e, if c < 0.0 { -1.0 } else { 1.0 }));
            used[e] = true;
        }
    }
    Ok(map.into_iter().map(|m| m.expect("every column matched")).collect())
}

/// `(||w_hat - w|| / ||w||, ||U_hat - U|| / ||U||)` after alignment.
pub fn aligned_errors(est: &GmmModel, truth: &GmmModel) -> Result<(f64, f64)> {
    let map = align(est, truth)?;
    let mut dw = 0.0;
    let mut du = 0.0;
    for (t, &(e, sign)) in map.iter().enumerate() {
        dw += (est.weights[e] - truth.weights[t]).powi(2);
        du += (est.means.column(e) * sign - truth.means.column(t)).norm_squared();
    }
    let wn = truth.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    Ok((dw.sqrt() / wn, du.sqrt() / truth.means.norm()))
}

/// Sum of the aligned relative weight and mean errors.
pub fn fit_metric(est: &GmmModel, truth: &GmmModel) -> Result<f64> {
    let (w, u) = aligned_errors(est, truth)?;
    Ok(w + u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_model_is_valid() {
        let m = GmmModel::random(6, 3, 0.01, 1).unwrap();
        m.validate().unwrap();
        assert!(GmmModel::random(2, 3, 0.01, 1).is_err());
    }

    #[test]
    fn identical_samples() {
        let x = [0.5, -1.0, 2.0];
        let s = SampleSet::from_samples(Matrix::from_fn(8, 3, |_, j| x[j])).unwrap();
        let m = empirical_moments(&s, Execution::Sequential).unwrap();
        assert!(m.covariance.norm() < 1e-14);
        assert!(m.variance < 1e-14);
        let xxx = crate::tensor::outer(&[&x, &x, &x]).unwrap();
        assert!(m.third.sub(&xxx).unwrap().norm() < 1e-12);
        let one = SampleSet::from_samples(Matrix::from_fn(1, 3, |_, j| x[j])).unwrap();
        assert!(matches!(empirical_moments(&one, Execution::Sequential), Err(CpdError::Degenerate(_))));
    }

    #[test]
    fn noiseless_point_masses() {
        let model = GmmModel::new(
            vec![0.25, 0.75],
            Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            0.0,
        )
        .unwrap();
        let rows: Vec<usize> = vec![0, 1, 1, 1];
        let s = SampleSet::from_samples(Matrix::from_fn(4, 3, |r, j| model.means[(j, rows[r])])).unwrap();
        let m = empirical_moments(&s, Execution::Sequential).unwrap();
        // the covariance has a zero eigenvalue along e3, so no correction is applied
        assert!(m.variance < 1e-14);
        assert!(m.third.sub(&exact_third_moment(&model)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn third_moment_is_symmetric() {
        let model = GmmModel::random(4, 2, 0.05, 3).unwrap();
        let s = sample(&model, 500, 4).unwrap();
        let m = empirical_moments(&s, Execution::Parallel).unwrap();
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            assert_eq!(m.third.permute(&perm).unwrap(), m.third);
        }
        let seq = empirical_moments(&s, Execution::Sequential).unwrap();
        assert_eq!(seq, m);
    }

    #[test]
    fn degenerate_single_component() {
        let model = GmmModel::new(vec![1.0], Matrix::from_column_slice(2, 1, &[0.6, 0.8]), 0.0).unwrap();
        let s = sample(&model, 10, 1).unwrap();
        for r in 0..10 {
            assert_eq!(s.samples.row(r).transpose(), model.means.column(0));
        }
    }

    #[test]
    fn metric_examples() {
        let truth = GmmModel::random(5, 3, 0.01, 8).unwrap();
        assert_eq!(fit_metric(&truth, &truth).unwrap(), 0.0);

        let mut perm = truth.clone();
        perm.weights = vec![truth.weights[2], truth.weights[0], truth.weights[1]];
        for (dst, src) in [(0, 2), (1, 0), (2, 1)] {
            perm.means.set_column(dst, &(-truth.means.column(src)));
        }
        assert!(fit_metric(&perm, &truth).unwrap() < 1e-15);

        let mut shifted = truth.clone();
        shifted.weights[0] += 0.1;
        shifted.weights[1] -= 0.1;
        let wn = truth.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let expect = (0.02f64).sqrt() / wn;
        assert!((fit_metric(&shifted, &truth).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn sign_fix_preserves_terms() {
        let u = Matrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let k = KruskalOperand::new(vec![-&u * 2.0, -&u, -&u]).unwrap();
        let (lambda, v) = normalize_terms(&k);
        assert!((lambda[0] - 2.0).abs() < 1e-15);
        let scaled = &v * lambda[0];
        let rebuilt = KruskalOperand::new(vec![scaled, v.clone(), v]).unwrap();
        assert!(rebuilt.to_full().sub(&k.to_full()).unwrap().norm() < 1e-12);
    }
}
