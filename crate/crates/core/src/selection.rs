//! Rank selection by BIC and penalty-level selection on a validation set.

use rayon::prelude::*;
use serde::Serialize;

use crate::correlation::CorrKind;
use crate::data::LongitudinalDataset;
use crate::error::{Result, TgeeError};
use crate::family::Family;
use crate::sim::prediction_metrics;
use crate::solver::{fit, fit_independence_init, FitConfig, FitResult};

/// Effective number of CP parameters after removing the scaling and
/// permutation indeterminacy.
pub fn effective_params(dims: &[usize], rank: usize) -> usize {
    let sum: usize = dims.iter().sum();
    if dims.len() == 2 {
        (rank * sum).saturating_sub(rank * rank)
    } else {
        rank * (sum + 1).saturating_sub(dims.len())
    }
}

/// `sum_ij l(Y_ij; theta_ij)` with unit dispersion.
pub fn log_likelihood(data: &LongitudinalDataset, eta: &[f64]) -> f64 {
    let family = data.family();
    data.y().iter().zip(eta).map(|(&y, &t)| family.log_likelihood(y, t)).sum()
}

pub fn bic_value(log_lik: f64, n: usize, p_e: usize) -> f64 {
    -2.0 * log_lik + (n as f64).ln() * p_e as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bic {
    pub value: f64,
    pub log_lik: f64,
    pub p_e: usize,
    /// False when the underlying fit did not converge.
    pub converged: bool,
}

/// BIC of a fit produced under the independence working correlation.
pub fn bic(data: &LongitudinalDataset, fit: &FitResult) -> Result<Bic> {
    if fit.wc.kind != CorrKind::Independence {
        return Err(TgeeError::InvalidInput(format!(
            "BIC needs an independence-working fit, got {}",
            fit.wc.kind
        )));
    }
    let eta = fit.linear_predictors(data)?;
    let log_lik = log_likelihood(&data.clone().with_family(fit.family), &eta);
    let p_e = effective_params(data.dims(), fit.model.rank());
    Ok(Bic { value: bic_value(log_lik, data.n(), p_e), log_lik, p_e, converged: fit.converged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub rank: usize,
    pub p_e: usize,
    pub bic: Option<f64>,
    pub converged: bool,
    /// Set when the fit at this rank failed; such ranks are not eligible.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSelection {
    pub entries: Vec<RankEntry>,
    pub chosen: usize,
}

impl RankSelection {
    pub fn candidates(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.rank).collect()
    }
}

/// Fits every candidate rank under independence and picks the BIC minimizer,
/// preferring the smaller rank on ties.
pub fn select_rank(
    data: &LongitudinalDataset,
    ranks: &[usize],
    family: Family,
    seed: u64,
) -> Result<RankSelection> {
    if ranks.is_empty() {
        return Err(TgeeError::InvalidInput("no candidate ranks".into()));
    }
    let data = data.clone().with_family(family);
    let entries: Vec<RankEntry> = ranks
        .par_iter()
        .map(|&rank| {
            let p_e = effective_params(data.dims(), rank);
            match fit_independence_init(&data, rank, family, seed).and_then(|f| bic(&data, &f)) {
                Ok(b) => RankEntry { rank, p_e, bic: Some(b.value), converged: b.converged, error: None },
                Err(e) => {
                    log::warn!("rank {rank} failed: {e}");
                    RankEntry { rank, p_e, bic: None, converged: false, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let chosen = entries
        .iter()
        .filter_map(|e| e.bic.filter(|v| v.is_finite()).map(|v| (v, e.rank)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, r)| r)
        .ok_or_else(|| TgeeError::InvalidInput("every candidate rank failed to fit".into()))?;
    Ok(RankSelection { entries, chosen })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaEntry {
    pub lambda: f64,
    /// Validation RMSE (gaussian) or total deviance (other families).
    pub metric: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSelection {
    pub entries: Vec<LambdaEntry>,
    pub chosen: f64,
}

/// Validation loss of a fitted model.
pub fn validation_metric(fit: &FitResult, valid: &LongitudinalDataset) -> Result<f64> {
    let eta = fit.linear_predictors(valid)?;
    let mu: Vec<f64> = eta.iter().map(|&t| fit.family.mean(t)).collect();
    match fit.family {
        Family::Gaussian => Ok(prediction_metrics(valid.y(), &mu)?.rmse),
        f => Ok(valid.y().iter().zip(&mu).map(|(&y, &m)| f.deviance(y, m)).sum()),
    }
}

/// Fits `cfg` at every penalty level on `train` and keeps the level with the
/// smallest validation loss, preferring the larger level on ties.
pub fn select_lambda(
    train: &LongitudinalDataset,
    valid: &LongitudinalDataset,
    grid: &[f64],
    cfg: &FitConfig,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(TgeeError::InvalidInput("empty penalty grid".into()));
    }
    if cfg.penalty.is_none() && grid.iter().any(|&l| l != 0.0) {
        return Err(TgeeError::InvalidInput("a positive penalty level needs a penalty kind".into()));
    }
    let entries: Vec<LambdaEntry> = grid
        .par_iter()
        .map(|&lambda| {
            let c = FitConfig { lambda, ..cfg.clone() };
            match fit(train, &c).and_then(|f| Ok((validation_metric(&f, valid)?, f.converged))) {
                Ok((metric, converged)) => LambdaEntry { lambda, metric: Some(metric), converged, error: None },
                Err(e) => {
                    log::warn!("lambda {lambda} failed: {e}");
                    LambdaEntry { lambda, metric: None, converged: false, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let chosen = entries
        .iter()
        .filter_map(|e| e.metric.filter(|v| v.is_finite()).map(|v| (v, e.lambda)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)))
        .map(|(_, l)| l)
        .ok_or_else(|| TgeeError::InvalidInput("every penalty level failed to fit".into()))?;
    Ok(LambdaSelection { entries, chosen })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_params_formula() {
        assert_eq!(effective_params(&[64, 64], 1), 127);
        assert_eq!(effective_params(&[64, 64], 2), 252);
        assert_eq!(effective_params(&[32, 32, 32], 2), 188);
        assert_eq!(effective_params(&[4, 4], 1), 7);
        assert_eq!(effective_params(&[4, 4], 2), 12);
    }

    #[test]
    fn bic_of_perfect_gaussian_fit() {
        // n = 10, m = 2, zero residuals
        let ll = -20.0 * 0.5 * (2.0 * std::f64::consts::PI).ln();
        let v = bic_value(ll, 10, effective_params(&[4, 4], 1));
        assert!((v - 52.875637).abs() < 1e-5, "{v}");
    }
}
