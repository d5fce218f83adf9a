//! Dense order-`L` tensors and the multilinear primitives built on them.
//!
//! Storage is row-major: the first mode varies slowest and the last mode
//! fastest. Modes are numbered from zero in the API.
//!
//! The mode-`l` unfolding is the `I_l x prod(I_k, k != l)` matrix whose row
//! `i` holds the hyperslice with index `l` fixed to `i`; its columns run
//! lexicographically over the remaining indices, again with the earliest mode
//! slowest.

use crate::error::{CpdError, Result};
use crate::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(CpdError::Shape("a tensor needs at least one mode".into()));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(CpdError::Shape(format!("dimension {pos} is zero")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CpdError::Shape("element count overflows usize".into()))
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return Err(CpdError::Shape(format!(
                "dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// # Panics
    /// If `dims` is empty or contains a zero.
    pub fn zeros(dims: &[usize]) -> Self {
        let len = check_dims(dims).expect("invalid tensor dimensions");
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in storage order.
    ///
    /// # Panics
    /// If `dims` is empty or contains a zero.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for value in t.data.iter_mut() {
            *value = f(&idx);
            increment(&mut idx, dims);
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.linear_index(idx);
        self.data[k] = value;
    }

    pub fn norm(&self) -> f64 {
        norm(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(prod dims[..mode], dims[mode], prod dims[mode+1..])`
    pub(crate) fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        split_dims(&self.dims, mode)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self - other`, entrywise.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_shape(self, other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self + alpha * other`, entrywise.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Result<Self> {
        same_shape(self, other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    /// Applies `perm` to the modes: output mode `k` is input mode `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let l = self.order();
        let mut seen = vec![false; l];
        if perm.len() != l || perm.iter().any(|&p| p >= l || std::mem::replace(&mut seen[p], true)) {
            return Err(CpdError::Parameter(format!("{perm:?} is not a permutation of {l} modes")));
        }
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let mut src = vec![0usize; l];
        Ok(Self::from_fn(&dims, |idx| {
            for (k, &p) in perm.iter().enumerate() {
                src[p] = idx[k];
            }
            self.get(&src)
        }))
    }
}

pub(crate) fn split_dims(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = dims[..mode].iter().product();
    let right = dims[mode + 1..].iter().product();
    (left, dims[mode], right)
}

/// Advances a row-major multi-index; wraps to all zeros after the last entry.
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn same_shape(t: &DenseTensor, s: &DenseTensor) -> Result<()> {
    if t.dims != s.dims {
        return Err(CpdError::Shape(format!("{:?} vs {:?}", t.dims, s.dims)));
    }
    Ok(())
}

fn check_mode(t: &DenseTensor, mode: usize) -> Result<()> {
    if mode >= t.order() {
        return Err(CpdError::Range(format!(
            "mode {mode} for a tensor of order {}",
            t.order()
        )));
    }
    Ok(())
}

pub fn inner(t: &DenseTensor, s: &DenseTensor) -> Result<f64> {
    same_shape(t, s)?;
    Ok(t.data.iter().zip(&s.data).map(|(a, b)| a * b).sum())
}

/// Frobenius norm.
pub fn norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Tensor (outer) product `v_1 ⊗ ... ⊗ v_L`.
pub fn outer(vectors: &[&[f64]]) -> Result<DenseTensor> {
    if vectors.len() < 2 {
        return Err(CpdError::Parameter("outer product needs at least two vectors".into()));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    check_dims(&dims)?;
    let mut data = vec![1.0];
    for v in vectors {
        data = data
            .iter()
            .flat_map(|&a| v.iter().map(move |&b| a * b))
            .collect();
    }
    DenseTensor::new(dims, data)
}

/// Mode-`mode` product: contracts index `mode` of `t` with the columns of `mat`.
pub fn mode_product(t: &DenseTensor, mat: &Matrix, mode: usize) -> Result<DenseTensor> {
    check_mode(t, mode)?;
    let (left, mid, right) = t.split_at_mode(mode);
    if mat.ncols() != mid {
        return Err(CpdError::Shape(format!(
            "mode {mode} has size {mid} but the matrix has {} columns",
            mat.ncols()
        )));
    }
    let rows = mat.nrows();
    let mut dims = t.dims.clone();
    dims[mode] = rows;
    check_dims(&dims)?;
    let mut out = vec![0.0; left * rows * right];
    for a in 0..left {
        let src = &t.data[a * mid * right..(a + 1) * mid * right];
        let dst = &mut out[a * rows * right..(a + 1) * rows * right];
        for k in 0..mid {
            let src_row = &src[k * right..(k + 1) * right];
            for j in 0..rows {
                let m = mat[(j, k)];
                if m == 0.0 {
                    continue;
                }
                for (d, s) in dst[j * right..(j + 1) * right].iter_mut().zip(src_row) {
                    *d += m * s;
                }
            }
        }
    }
    DenseTensor::new(dims, out)
}

/// `(M_1, ..., M_L) · t`, applying one mode product per matrix.
pub fn multilinear_mult(mats: &[Matrix], t: &DenseTensor) -> Result<DenseTensor> {
    if mats.len() != t.order() {
        return Err(CpdError::Shape(format!(
            "{} matrices for a tensor of order {}",
            mats.len(),
            t.order()
        )));
    }
    for (l, m) in mats.iter().enumerate() {
        if m.ncols() != t.dims[l] {
            return Err(CpdError::Shape(format!(
                "matrix {l} has {} columns, mode size is {}",
                m.ncols(),
                t.dims[l]
            )));
        }
    }
    mats.iter()
        .enumerate()
        .try_fold(t.clone(), |acc, (l, m)| mode_product(&acc, m, l))
}

pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    check_mode(t, mode)?;
    let (left, mid, right) = t.split_at_mode(mode);
    let cols = left * right;
    Ok(Matrix::from_fn(mid, cols, |i, c| {
        let (a, b) = (c / right, c % right);
        t.data[(a * mid + i) * right + b]
    }))
}

/// Inverse of [`unfold`].
pub fn refold(m: &Matrix, mode: usize, dims: &[usize]) -> Result<DenseTensor> {
    let len = check_dims(dims)?;
    if mode >= dims.len() {
        return Err(CpdError::Range(format!("mode {mode} for order {}", dims.len())));
    }
    let (left, mid, right) = split_dims(dims, mode);
    if m.nrows() != mid || m.ncols() != left * right {
        return Err(CpdError::Shape(format!(
            "{}x{} matrix cannot refold into {dims:?} along mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![0.0; len];
    for a in 0..left {
        for i in 0..mid {
            for b in 0..right {
                data[(a * mid + i) * right + b] = m[(i, a * right + b)];
            }
        }
    }
    DenseTensor::new(dims.to_vec(), data)
}

/// Norms of the mode-`mode` hyperslices, in index order.
pub fn hyperslice_norms(t: &DenseTensor, mode: usize) -> Result<Vec<f64>> {
    check_mode(t, mode)?;
    let (left, mid, right) = t.split_at_mode(mode);
    let mut sq = vec![0.0; mid];
    for a in 0..left {
        for (i, acc) in sq.iter_mut().enumerate() {
            let start = (a * mid + i) * right;
            *acc += t.data[start..start + right].iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// Kronecker product `A ⊗̃ B`: the block matrix `[a_ij B]`.
///
/// Distinct from [`outer`], which builds a tensor.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}
