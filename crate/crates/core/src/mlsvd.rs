//! Truncated multilinear SVD (sequentially truncated HOSVD).
//!
//! Modes are processed in ascending order. For mode `l` the current
//! (partially compressed) core is unfolded, its left singular vectors give
//! `U_l`, and the core is multiplied by `U_l^T` along that mode before moving
//! on. With an energy tolerance `tol`, each mode keeps the smallest number of
//! singular vectors whose discarded squared singular values stay within
//! `tol^2 / L * ||t||^2`, so the relative reconstruction error is at most `tol`.
//! Singular values below the numerical-rank threshold are always dropped.

use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::kruskal::KruskalOperand;
use crate::tensor::{hyperslice_norms, mode_product, multilinear_mult, unfold, DenseTensor};
use crate::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlsvdResult {
    /// Orthonormal-column factors `U_l`, shape `I_l x R_l`.
    pub factors: Vec<Matrix>,
    /// Core tensor with dims `(R_1, ..., R_L)`.
    pub core: DenseTensor,
    /// Hyperslice norms of the core along each mode (the multilinear singular values).
    pub slice_energies: Vec<Vec<f64>>,
    /// Dimensions of the decomposed tensor.
    pub original_dims: Vec<usize>,
    /// Numerical multilinear rank observed while computing the factors.
    pub numerical_ranks: Vec<usize>,
    /// `||t - (U_1, ..., U_L) · core||`.
    pub truncation_error: f64,
    /// `||t||`.
    pub tensor_norm: f64,
}

impl MlsvdResult {
    pub fn truncated_dims(&self) -> &[usize] {
        self.core.dims()
    }

    pub fn relative_error(&self) -> f64 {
        self.truncation_error / self.tensor_norm
    }

    pub fn reconstruct(&self) -> DenseTensor {
        multilinear_mult(&self.factors, &self.core).expect("factor and core shapes agree")
    }

    /// Whether any mode was compressed below its original size.
    pub fn is_truncated(&self) -> bool {
        self.core.dims() != self.original_dims.as_slice()
    }
}

// serde for DenseTensor so MLSVD results can be archived alongside reports
impl Serialize for DenseTensor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("DenseTensor", 2)?;
        st.serialize_field("dims", self.dims())?;
        st.serialize_field("data", self.data())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for DenseTensor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            dims: Vec<usize>,
            data: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        DenseTensor::new(raw.dims, raw.data).map_err(serde::de::Error::custom)
    }
}

struct ModeSvd {
    u: Matrix,
    singular_values: Vec<f64>,
    numerical_rank: usize,
}

fn mode_svd(t: &DenseTensor, mode: usize) -> Result<ModeSvd> {
    let m = unfold(t, mode)?;
    let (rows, cols) = m.shape();
    let svd = m.svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_full = svd.u.expect("left singular vectors requested");
    let u = Matrix::from_fn(rows, order.len(), |i, j| u_full[(i, order[j])]);
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let threshold = smax * (rows.max(cols) as f64) * f64::EPSILON;
    let numerical_rank = singular_values.iter().filter(|&&s| s > threshold).count();
    if !smax.is_finite() {
        return Err(CpdError::Numerical {
            iteration: mode,
            message: "non-finite singular value in unfolding".into(),
        });
    }
    Ok(ModeSvd {
        u,
        singular_values,
        numerical_rank,
    })
}

/// Smallest `k` in `1..=rank` whose discarded energy fits in `budget_sq`.
fn rank_for_budget(singular_values: &[f64], numerical_rank: usize, budget_sq: f64) -> usize {
    let mut k = numerical_rank;
    let mut dropped: f64 = singular_values[numerical_rank..].iter().map(|s| s * s).sum();
    while k > 1 {
        let next = dropped + singular_values[k - 1] * singular_values[k - 1];
        if next > budget_sq {
            break;
        }
        dropped = next;
        k -= 1;
    }
    k
}

fn check_input(t: &DenseTensor, energy_tol: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&energy_tol) {
        return Err(CpdError::Parameter(format!(
            "energy tolerance must lie in [0, 1), got {energy_tol}"
        )));
    }
    if !t.is_finite() {
        return Err(CpdError::Degenerate("tensor has non-finite entries".into()));
    }
    let norm = t.norm();
    if norm == 0.0 {
        return Err(CpdError::Degenerate("cannot compress the zero tensor".into()));
    }
    Ok(norm)
}

fn finish(t: &DenseTensor, factors: Vec<Matrix>, core: DenseTensor, numerical_ranks: Vec<usize>, tensor_norm: f64) -> MlsvdResult {
    let slice_energies = (0..core.order())
        .map(|l| hyperslice_norms(&core, l).expect("mode in range"))
        .collect();
    let recon = multilinear_mult(&factors, &core).expect("shapes agree");
    let truncation_error = t.sub(&recon).expect("same dims").norm();
    MlsvdResult {
        factors,
        core,
        slice_energies,
        original_dims: t.dims().to_vec(),
        numerical_ranks,
        truncation_error,
        tensor_norm,
    }
}

pub fn compute_mlsvd(t: &DenseTensor, energy_tol: f64) -> Result<MlsvdResult> {
    let tensor_norm = check_input(t, energy_tol)?;
    let order = t.order();
    let budget_sq = energy_tol * energy_tol / order as f64 * tensor_norm * tensor_norm;
    let mut core = t.clone();
    let mut factors = Vec::with_capacity(order);
    let mut numerical_ranks = Vec::with_capacity(order);
    for mode in 0..order {
        let svd = mode_svd(&core, mode)?;
        if svd.numerical_rank == 0 {
            return Err(CpdError::Degenerate(format!("mode {mode} has numerical rank 0")));
        }
        let keep = rank_for_budget(&svd.singular_values, svd.numerical_rank, budget_sq);
        let u = svd.u.columns(0, keep).into_owned();
        core = mode_product(&core, &u.transpose(), mode)?;
        factors.push(u);
        numerical_ranks.push(svd.numerical_rank);
    }
    Ok(finish(t, factors, core, numerical_ranks, tensor_norm))
}

/// MLSVD of a tensor with equal dimensions that uses the mode-1 subspace for
/// every mode, so the core of a symmetric tensor is itself symmetric.
pub fn symmetric_mlsvd(t: &DenseTensor, energy_tol: f64) -> Result<MlsvdResult> {
    let tensor_norm = check_input(t, energy_tol)?;
    let n = t.dims()[0];
    if t.dims().iter().any(|&d| d != n) {
        return Err(CpdError::Shape(format!("symmetric MLSVD needs equal dims, got {:?}", t.dims())));
    }
    let order = t.order();
    let budget_sq = energy_tol * energy_tol / order as f64 * tensor_norm * tensor_norm;
    let svd = mode_svd(t, 0)?;
    if svd.numerical_rank == 0 {
        return Err(CpdError::Degenerate("mode 0 has numerical rank 0".into()));
    }
    let keep = rank_for_budget(&svd.singular_values, svd.numerical_rank, budget_sq);
    let u = svd.u.columns(0, keep).into_owned();
    let ut = u.transpose();
    let mut core = t.clone();
    for mode in 0..order {
        core = mode_product(&core, &ut, mode)?;
    }
    let factors = vec![u; order];
    Ok(finish(t, factors, core, vec![svd.numerical_rank; order], tensor_norm))
}

/// Keeps the leading `target[l]` columns of each factor and the matching
/// leading block of the core. The discarded part is measured against the
/// zero-padded truncated core.
pub fn truncate(res: &MlsvdResult, target: &[usize]) -> Result<MlsvdResult> {
    let dims = res.core.dims();
    if target.len() != dims.len() {
        return Err(CpdError::Shape(format!(
            "target {target:?} has {} modes, core has {}",
            target.len(),
            dims.len()
        )));
    }
    if let Some(l) = (0..dims.len()).find(|&l| target[l] == 0 || target[l] > dims[l]) {
        return Err(CpdError::Range(format!(
            "target rank {} for mode {l} outside 1..={}",
            target[l], dims[l]
        )));
    }
    let core = DenseTensor::from_fn(target, |idx| res.core.get(idx));
    let dropped_sq = (res.core.norm().powi(2) - core.norm().powi(2)).max(0.0);
    let dropped_sq = if dropped_sq == 0.0 {
        0.0
    } else {
        // direct sum over the complement avoids cancellation in the difference above
        let mut idx = vec![0usize; dims.len()];
        let mut acc = 0.0;
        for &v in res.core.data() {
            if idx.iter().zip(target).any(|(i, t)| i >= t) {
                acc += v * v;
            }
            crate::tensor::increment(&mut idx, dims);
        }
        acc
    };
    let factors: Vec<Matrix> = res
        .factors
        .iter()
        .zip(target)
        .map(|(u, &k)| u.columns(0, k).into_owned())
        .collect();
    let slice_energies = (0..core.order())
        .map(|l| hyperslice_norms(&core, l).expect("mode in range"))
        .collect();
    Ok(MlsvdResult {
        factors,
        core,
        slice_energies,
        original_dims: res.original_dims.clone(),
        numerical_ranks: res.numerical_ranks.clone(),
        truncation_error: (res.truncation_error.powi(2) + dropped_sq).sqrt(),
        tensor_norm: res.tensor_norm,
    })
}

/// Per-mode count of singular values above `tol` times the largest one.
pub fn multilinear_rank(t: &DenseTensor, tol: f64) -> Result<Vec<usize>> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(CpdError::Parameter(format!("tolerance must be finite and >= 0, got {tol}")));
    }
    (0..t.order())
        .map(|mode| {
            let m = unfold(t, mode)?;
            let sv = m.singular_values();
            let smax = sv.max();
            if smax == 0.0 {
                return Ok(0);
            }
            Ok(sv.iter().filter(|&&s| s > tol * smax).count())
        })
        .collect()
}

/// Maps a CPD of the core back to the original space: factors `U_l W_l`.
pub fn decompress_cpd(res: &MlsvdResult, core_cpd: &KruskalOperand) -> Result<KruskalOperand> {
    if core_cpd.dims() != res.core.dims() {
        return Err(CpdError::Shape(format!(
            "operand dims {:?} do not match core dims {:?}",
            core_cpd.dims(),
            res.core.dims()
        )));
    }
    let factors = res
        .factors
        .iter()
        .zip(core_cpd.factors())
        .map(|(u, w)| u * w)
        .collect();
    KruskalOperand::new(factors)
}
