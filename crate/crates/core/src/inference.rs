//! Sandwich covariance of the normalized CP factor entries and Wald intervals.
//!
//! The factor vector is `beta = [vec(B_1); ...; vec(B_D)]`. Its raw covariance
//! `bread^+ meat bread^+` is mapped through the Jacobian of [`normalize`] so the
//! result refers to the identified (normalized) entries.
//!
//! [`normalize`]: crate::tensor::normalize

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::LongitudinalDataset;
use crate::error::{Result, TgeeError};
use crate::solver::FitResult;
use crate::tensor::{CpModel, ModeProjector};

/// Largest factor dimension `R * sum(p_d)` for which dense matrices are built.
pub const MAX_INFERENCE_DIM: usize = 4096;
const PINV_RTOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SandwichEstimate {
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    /// `bread^+ meat bread^+` in the raw factor coordinates.
    pub raw_cov: DMatrix<f64>,
    /// Covariance of the normalized factor entries.
    pub cov: DMatrix<f64>,
    pub se: DVector<f64>,
    /// Rank deficiency of the bread.
    pub null_dim: usize,
    pub warnings: Vec<String>,
}

/// Dimension of the scaling (and, for matrices, rotation) indeterminacy.
pub fn gauge_dim(order: usize, rank: usize) -> usize {
    if order == 2 {
        rank * rank
    } else {
        rank * order.saturating_sub(1)
    }
}

struct Subject {
    g: DMatrix<f64>,
    a_sqrt: DVector<f64>,
    pearson: DVector<f64>,
}

fn check_dim(model: &CpModel) -> Result<usize> {
    let dim = model.num_params();
    if dim > MAX_INFERENCE_DIM {
        return Err(TgeeError::InvalidInput(format!(
            "inference needs a {dim}x{dim} matrix; the limit is {MAX_INFERENCE_DIM} (reduce the rank or the tensor size)"
        )));
    }
    Ok(dim)
}

fn subjects(data: &LongitudinalDataset, fit: &FitResult) -> Result<Vec<Subject>> {
    let model = &fit.model;
    let dim = check_dim(model)?;
    let projs: Vec<ModeProjector> =
        (0..model.order()).map(|d| ModeProjector::new(model, d)).collect::<Result<_>>()?;
    let eta = fit.linear_predictors(data)?;
    let m = data.m();
    let mut row = vec![0.0; dim];
    (0..data.n())
        .map(|i| {
            let mut g = DMatrix::zeros(m, dim);
            let mut a_sqrt = DVector::zeros(m);
            let mut pearson = DVector::zeros(m);
            for j in 0..m {
                let k = i * m + j;
                let var = fit.family.variance(eta[k]);
                if !(var > 0.0) {
                    return Err(TgeeError::ZeroVariance { subject: i, time: j });
                }
                a_sqrt[j] = var.sqrt();
                pearson[j] = (data.y()[k] - fit.family.mean(eta[k])) / a_sqrt[j];
                let mut off = 0;
                for p in &projs {
                    let w = p.width();
                    p.project_into(data.x_obs(k), &mut row[off..off + w]);
                    off += w;
                }
                for (c, &v) in row.iter().enumerate() {
                    g[(j, c)] = v;
                }
            }
            Ok(Subject { g, a_sqrt, pearson })
        })
        .collect()
}

/// `sum_i G_i' A_i^{1/2} W A_i^{1/2} G_i`.
fn accumulate(subs: &[Subject], w: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for s in subs {
        let ag = DMatrix::from_fn(s.g.nrows(), dim, |j, c| s.a_sqrt[j] * s.g[(j, c)]);
        let wag = w * &ag;
        out.gemm_tr(1.0, &ag, &wag, 1.0);
    }
    (&out + out.transpose()) * 0.5
}

fn bread_from(subs: &[Subject], fit: &FitResult, dim: usize) -> Result<DMatrix<f64>> {
    Ok(accumulate(subs, &fit.wc.inverse()?, dim))
}

fn meat_from(subs: &[Subject], fit: &FitResult, dim: usize) -> Result<DMatrix<f64>> {
    let m = fit.wc.dim();
    if subs.is_empty() {
        return Ok(DMatrix::zeros(dim, dim));
    }
    let mut rbar = DMatrix::zeros(m, m);
    for s in subs {
        rbar.ger(1.0, &s.pearson, &s.pearson, 1.0);
    }
    rbar /= subs.len() as f64;
    let rinv = fit.wc.inverse()?;
    Ok(accumulate(subs, &(&rinv * rbar * &rinv), dim))
}

/// Model-based information of the factor entries at the fitted values.
pub fn bread(data: &LongitudinalDataset, fit: &FitResult) -> Result<DMatrix<f64>> {
    let dim = check_dim(&fit.model)?;
    bread_from(&subjects(data, fit)?, fit, dim)
}

/// Robust middle term built from the averaged Pearson residual outer product.
pub fn meat(data: &LongitudinalDataset, fit: &FitResult) -> Result<DMatrix<f64>> {
    let dim = check_dim(&fit.model)?;
    meat_from(&subjects(data, fit)?, fit, dim)
}

/// Pseudo-inverse of a symmetric PSD matrix and its numerical null dimension.
pub fn psd_pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let cut = PINV_RTOL * top;
    let mut inv = DMatrix::zeros(n, n);
    let mut null = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            inv.ger(1.0 / lam, &v, &v, 1.0);
        } else {
            null += 1;
        }
    }
    (inv, null)
}

/// Jacobian of the normalization map, evaluated at an already normalized model.
pub fn normalization_jacobian(model: &CpModel) -> DMatrix<f64> {
    let dims = model.dims();
    let order = dims.len();
    let rank = model.rank();
    let dim = model.num_params();
    let mut offs = vec![0; order];
    for d in 1..order {
        offs[d] = offs[d - 1] + dims[d - 1] * rank;
    }
    let mut jac = DMatrix::zeros(dim, dim);
    let last = order - 1;
    for r in 0..rank {
        let bl = model.factor(last).column(r);
        let pl = dims[last];
        let ol = offs[last] + r * pl;
        for i in 0..pl {
            jac[(ol + i, ol + i)] = 1.0;
        }
        for d in 0..last {
            let p = dims[d];
            let o = offs[d] + r * p;
            let col = model.factor(d).column(r);
            let norm = col.norm();
            if norm == 0.0 {
                continue;
            }
            let u = col / norm;
            for a in 0..p {
                for b in 0..p {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    jac[(o + a, o + b)] = (delta - u[a] * u[b]) / norm;
                }
            }
            for a in 0..pl {
                for b in 0..p {
                    jac[(ol + a, o + b)] = bl[a] * u[b];
                }
            }
        }
    }
    jac
}

/// Sandwich covariance of the normalized factor entries of `fit`.
pub fn sandwich(data: &LongitudinalDataset, fit: &FitResult) -> Result<SandwichEstimate> {
    let dim = check_dim(&fit.model)?;
    let subs = subjects(data, fit)?;
    let bread = bread_from(&subs, fit, dim)?;
    let meat = meat_from(&subs, fit, dim)?;
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push("fit did not converge; standard errors may be unreliable".to_string());
    }
    let (binv, null_dim) = psd_pinv(&bread);
    let expected = gauge_dim(fit.model.order(), fit.model.rank()).min(dim);
    if null_dim > expected {
        warnings.push(format!(
            "bread is singular beyond the CP indeterminacy (null dimension {null_dim}, expected {expected}); using the pseudo-inverse"
        ));
    }
    if fit.model.order() == 2 && fit.model.rank() > 1 {
        warnings.push("matrix factors with rank > 1 are identified only up to rotation".to_string());
    }
    let raw_cov = &binv * &meat * &binv;
    let jac = normalization_jacobian(&fit.model);
    let cov = &jac * &raw_cov * jac.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    let mut clamped = 0;
    let se = DVector::from_fn(dim, |k, _| {
        let v = cov[(k, k)];
        if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v.sqrt()
        }
    });
    if clamped > 0 {
        warnings.push(format!("{clamped} negative variances clamped to zero"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SandwichEstimate { bread, meat, raw_cov, cov, se, null_dim, warnings })
}

impl SandwichEstimate {
    /// Model-based counterpart `J bread^+ J'` of [`SandwichEstimate::cov`].
    pub fn model_based_cov(&self, model: &CpModel) -> DMatrix<f64> {
        let jac = normalization_jacobian(model);
        let (binv, _) = psd_pinv(&self.bread);
        &jac * binv * jac.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldRow {
    /// Factor index `d` (0-based).
    pub block: usize,
    pub row: usize,
    pub component: usize,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(TgeeError::InvalidInput(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Entrywise Wald intervals for the normalized factors.
pub fn wald(fit: &FitResult, sw: &SandwichEstimate, level: f64) -> Result<Vec<WaldRow>> {
    let z = z_quantile(level)?;
    let model = &fit.model;
    if sw.se.len() != model.num_params() {
        return Err(TgeeError::DimensionMismatch(format!(
            "sandwich has {} entries, model has {}",
            sw.se.len(),
            model.num_params()
        )));
    }
    let mut rows = Vec::with_capacity(model.num_params());
    let mut k = 0;
    for (d, f) in model.factors().iter().enumerate() {
        for component in 0..f.ncols() {
            for row in 0..f.nrows() {
                let estimate = f[(row, component)];
                let se = sw.se[k];
                rows.push(WaldRow { block: d, row, component, estimate, se, lo: estimate - z * se, hi: estimate + z * se });
                k += 1;
            }
        }
    }
    Ok(rows)
}
