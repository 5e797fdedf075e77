//! Dense tensor algebra and CP factor containers.
//!
//! Tensors are stored column-major (first index fastest), so the flat value
//! buffer *is* `vec(T)`. Modes are 0-based throughout the API.

use nalgebra::DMatrix;

use crate::error::{Result, TgeeError};

/// A D-way dense array, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        if values.len() != len {
            return Err(TgeeError::DimensionMismatch(format!(
                "tensor with dims {:?} needs {} values, got {}",
                dims,
                len,
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let len = dims.iter().product();
        Ok(Self { dims: dims.to_vec(), values: vec![0.0; len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_dims(dims)?;
        let len: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            advance(&mut idx, dims);
        }
        Ok(Self { dims: dims.to_vec(), values })
    }

    /// Wraps a matrix as a 2-way tensor.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { dims: vec![m.nrows(), m.ncols()], values: m.as_slice().to_vec() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `vec(T)`: the entries with the first index varying fastest.
    pub fn vec(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[linear_index(idx, &self.dims)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Reinterprets a 2-way tensor as a matrix.
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.order() == 2)
            .then(|| DMatrix::from_column_slice(self.dims[0], self.dims[1], &self.values))
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.iter().any(|&p| p == 0) {
        return Err(TgeeError::InvalidInput(format!(
            "tensor dims must be non-empty and positive, got {:?}",
            dims
        )));
    }
    Ok(())
}

/// Increments a column-major multi-index in place.
fn advance(idx: &mut [usize], dims: &[usize]) {
    for (i, &p) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < p {
            return;
        }
        *i = 0;
    }
}

fn linear_index(idx: &[usize], dims: &[usize]) -> usize {
    let mut k = 0;
    let mut stride = 1;
    for (&i, &p) in idx.iter().zip(dims) {
        k += i * stride;
        stride *= p;
    }
    k
}

fn check_mode(mode: usize, order: usize) -> Result<()> {
    if mode >= order {
        return Err(TgeeError::ModeOutOfRange { mode, order });
    }
    Ok(())
}

/// Sum of elementwise products, `<vec a, vec b>`.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.dims != b.dims {
        return Err(TgeeError::DimensionMismatch(format!(
            "inner product of {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    Ok(dot(&a.values, &b.values))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mode-`mode` matricization: a `p_mode x prod(other dims)` matrix whose
/// column index orders the remaining modes with the lower modes fastest.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(mode, t.order())?;
    let (left, pd, right) = split_dims(&t.dims, mode);
    let mut out = DMatrix::zeros(pd, left * right);
    for rr in 0..right {
        for i in 0..pd {
            let base = left * (i + pd * rr);
            for l in 0..left {
                out[(i, l + left * rr)] = t.values[base + l];
            }
        }
    }
    Ok(out)
}

fn split_dims(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = dims[..mode].iter().product();
    let right = dims[mode + 1..].iter().product();
    (left, dims[mode], right)
}

/// Column-wise Kronecker product; row index is `i_a * q + i_b`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(TgeeError::DimensionMismatch(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(p * q, a.ncols());
    for r in 0..a.ncols() {
        for i in 0..p {
            let ar = a[(i, r)];
            for j in 0..q {
                out[(i * q + j, r)] = ar * b[(j, r)];
            }
        }
    }
    Ok(out)
}

/// `B_D ⊙ ... ⊙ B_1` in descending mode order, optionally omitting one mode.
/// With every mode omitted the result is the `1 x R` row of ones.
pub fn khatri_rao_chain(factors: &[DMatrix<f64>], skip: Option<usize>) -> DMatrix<f64> {
    let rank = factors.first().map_or(0, |f| f.ncols());
    let mut acc = DMatrix::from_element(1, rank, 1.0);
    for (d, f) in factors.iter().enumerate().rev() {
        if Some(d) == skip {
            continue;
        }
        acc = khatri_rao(&acc, f).expect("factors share a column count");
    }
    acc
}

/// Rank-R CP model `B = [[B_1, ..., B_D]]`; `factors[d]` is `p_d x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    factors: Vec<DMatrix<f64>>,
}

impl CpModel {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(TgeeError::InvalidInput("CP model needs at least one factor".into()));
        };
        let rank = first.ncols();
        if rank == 0 {
            return Err(TgeeError::InvalidInput("CP rank must be at least 1".into()));
        }
        if let Some(bad) = factors.iter().position(|f| f.ncols() != rank || f.nrows() == 0) {
            return Err(TgeeError::DimensionMismatch(format!(
                "factor {} is {}x{}, expected R={} columns and at least one row",
                bad,
                factors[bad].nrows(),
                factors[bad].ncols(),
                rank
            )));
        }
        Ok(Self { factors })
    }

    pub fn zeros(dims: &[usize], rank: usize) -> Result<Self> {
        validate_dims(dims)?;
        Self::new(dims.iter().map(|&p| DMatrix::zeros(p, rank)).collect())
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

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, d: usize) -> &DMatrix<f64> {
        &self.factors[d]
    }

    /// Replaces factor `d`; the shape must not change.
    pub fn set_factor(&mut self, d: usize, f: DMatrix<f64>) {
        assert_eq!(f.shape(), self.factors[d].shape(), "factor shape changed");
        self.factors[d] = f;
    }

    /// `vec(B_1, ..., B_D)`: the stacked factor parameter vector.
    pub fn param_vec(&self) -> Vec<f64> {
        self.factors.iter().flat_map(|f| f.as_slice().iter().copied()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.factors.iter().map(|f| f.len()).sum()
    }
}

/// Full tensor from its CP factors: `vec B = (B_D ⊙ ... ⊙ B_1) 1_R`.
pub fn reconstruct(m: &CpModel) -> DenseTensor {
    let kr = khatri_rao_chain(&m.factors, None);
    let values: Vec<f64> = kr.row_iter().map(|row| row.sum()).collect();
    DenseTensor { dims: m.dims(), values }
}

/// Precomputed mode-d projection `X_(d) (B_D ⊙ .. B_{d+1} ⊙ B_{d-1} .. ⊙ B_1)`,
/// reusable across observations while the other factors stay fixed.
#[derive(Debug, Clone)]
pub struct ModeProjector {
    mode: usize,
    left: usize,
    pd: usize,
    right: usize,
    rank: usize,
    /// Khatri-Rao chain omitting `mode`, column-major `(left*right) x R`.
    kr: Vec<f64>,
}

impl ModeProjector {
    pub fn new(m: &CpModel, mode: usize) -> Result<Self> {
        check_mode(mode, m.order())?;
        let dims = m.dims();
        let (left, pd, right) = split_dims(&dims, mode);
        let kr = khatri_rao_chain(&m.factors, Some(mode));
        Ok(Self { mode, left, pd, right, rank: m.rank(), kr: kr.as_slice().to_vec() })
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    /// Length of a design row, `p_d * R`.
    pub fn width(&self) -> usize {
        self.pd * self.rank
    }

    /// Writes `vec(X_(d) K)` for one observation into `out`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        let (left, pd, right) = (self.left, self.pd, self.right);
        debug_assert_eq!(x.len(), left * pd * right);
        debug_assert_eq!(out.len(), pd * self.rank);
        let rows = left * right;
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rank {
            let kcol = &self.kr[rows * r..rows * (r + 1)];
            let ocol = &mut out[pd * r..pd * (r + 1)];
            if left == 1 {
                for (rr, &k) in kcol.iter().enumerate() {
                    if k == 0.0 {
                        continue;
                    }
                    let xs = &x[pd * rr..pd * (rr + 1)];
                    for (o, &xv) in ocol.iter_mut().zip(xs) {
                        *o += k * xv;
                    }
                }
            } else {
                for rr in 0..right {
                    let kseg = &kcol[left * rr..left * (rr + 1)];
                    for (i, o) in ocol.iter_mut().enumerate() {
                        let base = left * (i + pd * rr);
                        *o += dot(&x[base..base + left], kseg);
                    }
                }
            }
        }
    }
}

/// Design row for the block-`mode` sub-problem: `inner(reconstruct(m), x)`
/// equals `dot(result, vec(B_mode))`.
pub fn mode_design(x: &DenseTensor, m: &CpModel, mode: usize) -> Result<Vec<f64>> {
    if x.dims != m.dims() {
        return Err(TgeeError::DimensionMismatch(format!(
            "covariate dims {:?} vs model dims {:?}",
            x.dims,
            m.dims()
        )));
    }
    let proj = ModeProjector::new(m, mode)?;
    let mut out = vec![0.0; proj.width()];
    proj.project_into(&x.values, &mut out);
    Ok(out)
}

/// Index map with `vec(T)[perm[k]] == vec(T_(mode))[k]`.
pub fn perm_map(dims: &[usize], mode: usize) -> Result<Vec<usize>> {
    validate_dims(dims)?;
    check_mode(mode, dims.len())?;
    let (left, pd, right) = split_dims(dims, mode);
    let mut perm = Vec::with_capacity(left * pd * right);
    // vec of the matricization: row i fastest, then column j = l + left * rr.
    for rr in 0..right {
        for l in 0..left {
            for i in 0..pd {
                perm.push(l + left * (i + pd * rr));
            }
        }
    }
    Ok(perm)
}

/// Resolves CP scale/sign indeterminacy: columns of `B_1..B_{D-1}` get unit
/// norm with their largest-magnitude entry positive, `B_D` absorbs the rest.
pub fn normalize(m: &CpModel) -> CpModel {
    let mut factors = m.factors.clone();
    let last = factors.len() - 1;
    for r in 0..m.rank() {
        let mut scale = 1.0;
        for f in factors.iter_mut().take(last) {
            let mut col = f.column_mut(r);
            let norm = col.norm();
            if norm == 0.0 {
                scale = 0.0;
                continue;
            }
            let lead = col.iter().copied().fold(0.0_f64, |acc, v| {
                if v.abs() > acc.abs() {
                    v
                } else {
                    acc
                }
            });
            let s = lead.signum() * norm;
            col /= s;
            scale *= s;
        }
        if scale == 0.0 {
            for f in factors.iter_mut() {
                f.column_mut(r).fill(0.0);
            }
        } else {
            factors[last].column_mut(r).scale_mut(scale);
        }
    }
    CpModel { factors }
}
