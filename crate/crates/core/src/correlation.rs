//! Working correlation structures, their residual-moment estimators and inverses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Result, TgeeError};
use crate::family::Family;
use crate::tensor::{reconstruct, CpModel};

/// Largest admissible `|rho|` for the one-parameter structures.
pub const RHO_BOUND: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorrKind {
    #[default]
    Independence,
    Exchangeable,
    Ar1,
    Unstructured,
}

impl CorrKind {
    pub fn name(self) -> &'static str {
        match self {
            CorrKind::Independence => "independence",
            CorrKind::Exchangeable => "exchangeable",
            CorrKind::Ar1 => "ar1",
            CorrKind::Unstructured => "unstructured",
        }
    }
}

impl std::str::FromStr for CorrKind {
    type Err = TgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "independent" | "indep" => Ok(CorrKind::Independence),
            "exchangeable" | "cs" => Ok(CorrKind::Exchangeable),
            "ar1" | "ar-1" => Ok(CorrKind::Ar1),
            "unstructured" => Ok(CorrKind::Unstructured),
            other => Err(TgeeError::InvalidInput(format!("unknown correlation kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for CorrKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An `m x m` working correlation matrix with its structural parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingCorrelation {
    pub kind: CorrKind,
    /// `rho` for exchangeable and AR-1.
    pub param: Option<f64>,
    pub matrix: DMatrix<f64>,
    /// Set when the moment estimate of `rho` was clamped into the admissible range.
    pub clamped: bool,
}

impl WorkingCorrelation {
    pub fn identity(m: usize) -> Self {
        Self {
            kind: CorrKind::Independence,
            param: None,
            matrix: DMatrix::identity(m, m),
            clamped: false,
        }
    }

    pub fn exchangeable(m: usize, rho: f64) -> Self {
        let matrix = DMatrix::from_fn(m, m, |j, k| if j == k { 1.0 } else { rho });
        Self { kind: CorrKind::Exchangeable, param: Some(rho), matrix, clamped: false }
    }

    pub fn ar1(m: usize, rho: f64) -> Self {
        let matrix = DMatrix::from_fn(m, m, |j, k| rho.powi(j.abs_diff(k) as i32));
        Self { kind: CorrKind::Ar1, param: Some(rho), matrix, clamped: false }
    }

    /// Builds a structure of the given kind; `param` is ignored for
    /// independence and required for exchangeable/AR-1.
    pub fn structured(kind: CorrKind, m: usize, param: Option<f64>) -> Result<Self> {
        match (kind, param) {
            (CorrKind::Independence, _) => Ok(Self::identity(m)),
            (CorrKind::Exchangeable, Some(rho)) => Ok(Self::exchangeable(m, rho)),
            (CorrKind::Ar1, Some(rho)) => Ok(Self::ar1(m, rho)),
            (CorrKind::Unstructured, _) | (_, None) => Err(TgeeError::InvalidInput(format!(
                "cannot build {kind} correlation from a single parameter"
            ))),
        }
    }

    /// An unstructured correlation; the matrix must be a symmetric positive
    /// definite correlation matrix.
    pub fn unstructured(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(TgeeError::DimensionMismatch("correlation matrix must be square".into()));
        }
        if matrix.clone().cholesky().is_none() {
            return Err(TgeeError::NotPositiveDefinite(
                "unstructured correlation estimate is not positive definite; use a structured kind (exchangeable or ar1)".into(),
            ));
        }
        Ok(Self { kind: CorrKind::Unstructured, param: None, matrix, clamped: false })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `R^-1`, in closed form for independence and exchangeable.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let m = self.dim();
        match (self.kind, self.param) {
            (CorrKind::Independence, _) => Ok(DMatrix::identity(m, m)),
            (CorrKind::Exchangeable, Some(rho)) => {
                let denom = 1.0 + (m as f64 - 1.0) * rho;
                if (1.0 - rho).abs() < 1e-14 || denom.abs() < 1e-14 {
                    return Err(TgeeError::Singular(format!("exchangeable correlation with rho={rho}")));
                }
                let c = rho / denom;
                Ok(DMatrix::from_fn(m, m, |j, k| {
                    (if j == k { 1.0 - c } else { -c }) / (1.0 - rho)
                }))
            }
            _ => self
                .matrix
                .clone()
                .cholesky()
                .map(|ch| ch.inverse())
                .ok_or_else(|| TgeeError::Singular(format!("{} working correlation", self.kind))),
        }
    }
}

/// Pearson residuals `(Y_ij - mu_ij) / sigma_ij` as an `n x m` matrix.
pub fn pearson_residuals(
    data: &LongitudinalDataset,
    gamma: &[f64],
    model: &CpModel,
    family: Family,
) -> Result<DMatrix<f64>> {
    if model.dims() != data.dims() || gamma.len() != data.p0() {
        return Err(TgeeError::DimensionMismatch(format!(
            "model dims {:?} / gamma length {} vs data dims {:?} / p0 {}",
            model.dims(),
            gamma.len(),
            data.dims(),
            data.p0()
        )));
    }
    let b = reconstruct(model);
    let eta = data.linear_predictors(b.vec(), gamma);
    pearson_from_eta(data, &eta, family)
}

pub(crate) fn pearson_from_eta(
    data: &LongitudinalDataset,
    eta: &[f64],
    family: Family,
) -> Result<DMatrix<f64>> {
    let (n, m) = (data.n(), data.m());
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let k = i * m + j;
            let sd = family.variance(eta[k]).sqrt();
            if sd == 0.0 || !sd.is_finite() {
                return Err(TgeeError::ZeroVariance { subject: i, time: j });
            }
            out[(i, j)] = (data.y()[k] - family.mean(eta[k])) / sd;
        }
    }
    Ok(out)
}

/// Residual-moment estimate of the working correlation from an `n x m`
/// matrix of Pearson residuals.
pub fn estimate(kind: CorrKind, residuals: &DMatrix<f64>) -> Result<WorkingCorrelation> {
    let (n, m) = residuals.shape();
    if kind == CorrKind::Independence || m < 2 {
        let mut wc = WorkingCorrelation::identity(m);
        wc.kind = kind;
        if matches!(kind, CorrKind::Exchangeable | CorrKind::Ar1) {
            wc.param = Some(0.0);
        }
        return Ok(wc);
    }
    if n < 2 {
        return Err(TgeeError::InvalidInput(format!(
            "estimating a {kind} correlation needs at least 2 subjects, got {n}"
        )));
    }
    let nf = n as f64;
    let mf = m as f64;
    // Moment scale: cross-products are expressed relative to the average
    // squared residual so that misfit variance does not masquerade as correlation.
    let phi = residuals.iter().map(|e| e * e).sum::<f64>() / (nf * mf);
    let scaled = |raw: f64| if phi > 0.0 { raw / phi } else { 0.0 };
    match kind {
        CorrKind::Exchangeable => {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..m {
                    for k in j + 1..m {
                        acc += residuals[(i, j)] * residuals[(i, k)];
                    }
                }
            }
            let rho = scaled(acc / (nf * mf * (mf - 1.0) / 2.0));
            // Exchangeable is singular at rho = -1/(m-1) as well as at 1.
            let lower = (-1.0 / (mf - 1.0) + 0.01).max(-RHO_BOUND);
            let (rho, clamped) = clamp_rho(rho, lower, RHO_BOUND);
            Ok(WorkingCorrelation { clamped, ..WorkingCorrelation::exchangeable(m, rho) })
        }
        CorrKind::Ar1 => {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..m - 1 {
                    acc += residuals[(i, j)] * residuals[(i, j + 1)];
                }
            }
            let rho = scaled(acc / (nf * (mf - 1.0)));
            let (rho, clamped) = clamp_rho(rho, -RHO_BOUND, RHO_BOUND);
            Ok(WorkingCorrelation { clamped, ..WorkingCorrelation::ar1(m, rho) })
        }
        CorrKind::Unstructured => {
            let s = residuals.transpose() * residuals / nf;
            let s = (&s + s.transpose()) * 0.5;
            let diag: Vec<f64> = (0..m).map(|j| s[(j, j)]).collect();
            if diag.iter().any(|&v| !(v > 0.0)) {
                return Err(TgeeError::NotPositiveDefinite(
                    "unstructured correlation has a zero-variance time point; use a structured kind".into(),
                ));
            }
            let r = DMatrix::from_fn(m, m, |j, k| {
                if j == k {
                    1.0
                } else {
                    s[(j, k)] / (diag[j] * diag[k]).sqrt()
                }
            });
            WorkingCorrelation::unstructured(r)
        }
        CorrKind::Independence => unreachable!(),
    }
}

fn clamp_rho(rho: f64, lo: f64, hi: f64) -> (f64, bool) {
    if rho > hi {
        log::warn!("estimated correlation {rho:.4} clamped to {hi}");
        (hi, true)
    } else if rho < lo {
        log::warn!("estimated correlation {rho:.4} clamped to {lo:.4}");
        (lo, true)
    } else {
        (rho, false)
    }
}
