//! Shape-recovery simulations and estimator benchmarking.
//!
//! Responses follow `Y_i ~ MVN(mu_i, sigma^2 R_0)` with
//! `mu_ij = gamma' Z_ij + <B, X_ij>`, `gamma = 1`, and standard normal `Z`, `X`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrKind, WorkingCorrelation};
use crate::data::LongitudinalDataset;
use crate::error::{Result, TgeeError};
use crate::family::Family;
use crate::solver::{fit, FitConfig};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Tshape,
    Disk,
    Triangle,
    Butterfly,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] =
        [ShapeKind::Square, ShapeKind::Tshape, ShapeKind::Disk, ShapeKind::Triangle, ShapeKind::Butterfly];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Tshape => "tshape",
            ShapeKind::Disk => "disk",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Butterfly => "butterfly",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = TgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(ShapeKind::Square),
            "tshape" | "t-shape" | "t" => Ok(ShapeKind::Tshape),
            "disk" | "circle" => Ok(ShapeKind::Disk),
            "triangle" => Ok(ShapeKind::Triangle),
            "butterfly" | "bowtie" => Ok(ShapeKind::Butterfly),
            other => Err(TgeeError::InvalidInput(format!("unknown shape '{other}'"))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary shape mask on a `rows x cols` grid.
///
/// Geometry on the default 64x64 grid (0-based, half-open ranges), scaled
/// proportionally on other grids:
/// - square: rows 24..40, cols 24..40 (16x16, rank 1);
/// - tshape: bar rows 16..24 x cols 16..48 plus stem rows 24..48 x cols 28..36 (rank 2);
/// - disk: radius 15 about the grid centre;
/// - triangle: apex at row 16, base on row 47, half-width growing to 24;
/// - butterfly: two triangles with apexes at the centre opening left and
///   right, `|di| <= 0.75 |dj|` for `|dj| <= 24`.
pub fn make_shape(kind: ShapeKind, rows: usize, cols: usize) -> Result<DenseTensor> {
    if rows < 8 || cols < 8 {
        return Err(TgeeError::InvalidInput(format!("shape grid {rows}x{cols} too small (min 8x8)")));
    }
    let (p1, p2) = (rows as f64, cols as f64);
    let (c1, c2) = ((p1 - 1.0) / 2.0, (p2 - 1.0) / 2.0);
    let scale = p1.min(p2) / 64.0;
    let mask = |i: usize, j: usize| -> bool {
        let (fi, fj) = (i as f64, j as f64);
        match kind {
            ShapeKind::Square => {
                (rows * 3 / 8..rows * 5 / 8).contains(&i) && (cols * 3 / 8..cols * 5 / 8).contains(&j)
            }
            ShapeKind::Tshape => {
                let bar = (rows / 4..rows * 3 / 8).contains(&i) && (cols / 4..cols * 3 / 4).contains(&j);
                let stem = (rows * 3 / 8..rows * 3 / 4).contains(&i)
                    && (cols * 7 / 16..cols * 9 / 16).contains(&j);
                bar || stem
            }
            ShapeKind::Disk => {
                let r = 15.0 * scale;
                (fi - c1).powi(2) + (fj - c2).powi(2) <= r * r
            }
            ShapeKind::Triangle => {
                let top = (rows / 4) as f64;
                let bottom = (rows * 3 / 4) as f64 - 1.0;
                if fi < top || fi > bottom {
                    return false;
                }
                let half = (fi - top) / (bottom - top) * 24.0 * (p2 / 64.0);
                (fj - c2).abs() <= half
            }
            ShapeKind::Butterfly => {
                let dj = (fj - c2).abs();
                let di = (fi - c1).abs();
                dj <= 24.0 * (p2 / 64.0) && di <= 0.75 * dj * (p1 / p2)
            }
        }
    };
    DenseTensor::from_fn(&[rows, cols], |idx| if mask(idx[0], idx[1]) { 1.0 } else { 0.0 })
}

/// Numerical matrix rank via singular values (relative tolerance 1e-10).
pub fn matrix_rank(t: &DenseTensor) -> Option<usize> {
    let m = t.to_matrix()?;
    let sv = m.singular_values();
    let max = sv.max();
    Some(sv.iter().filter(|&&s| s > 1e-10 * max.max(f64::MIN_POSITIVE)).count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub p0: usize,
    pub sigma2: f64,
    pub rho: f64,
    /// Correlation structure of the true `R_0`.
    pub truth_corr: CorrKind,
    pub shape: ShapeKind,
    pub grid: (usize, usize),
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 500,
            m: 4,
            p0: 5,
            sigma2: 1.0,
            rho: 0.8,
            truth_corr: CorrKind::Exchangeable,
            shape: ShapeKind::Square,
            grid: (64, 64),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(TgeeError::InvalidInput("simulation needs n >= 1 and m >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(TgeeError::InvalidInput(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(TgeeError::InvalidInput(format!("sigma2 must be non-negative, got {}", self.sigma2)));
        }
        Ok(())
    }

    /// The true `m x m` correlation `R_0`.
    pub fn truth_correlation(&self) -> Result<WorkingCorrelation> {
        match self.truth_corr {
            CorrKind::Unstructured => Err(TgeeError::InvalidInput(
                "simulation truth must be independence, exchangeable or ar1".into(),
            )),
            kind => WorkingCorrelation::structured(kind, self.m, Some(self.rho)),
        }
    }
}

/// Ground truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub b: DenseTensor,
    pub gamma: Vec<f64>,
    /// Noise-free means, subject-major.
    pub mu: Vec<f64>,
}

/// Simulates a dataset whose coefficient tensor is the configured shape.
pub fn simulate(cfg: &SimConfig) -> Result<(LongitudinalDataset, Truth)> {
    let b = make_shape(cfg.shape, cfg.grid.0, cfg.grid.1)?;
    simulate_with_truth(cfg, &b)
}

/// Simulates with an arbitrary coefficient tensor (the shape and grid of
/// `cfg` are ignored).
pub fn simulate_with_truth(cfg: &SimConfig, b: &DenseTensor) -> Result<(LongitudinalDataset, Truth)> {
    cfg.validate()?;
    let (n, m, p0) = (cfg.n, cfg.m, cfg.p0);
    let size = b.len();
    let r0 = cfg.truth_correlation()?.matrix * cfg.sigma2;
    let chol = if cfg.sigma2 > 0.0 {
        Some(r0.cholesky().ok_or_else(|| TgeeError::NotPositiveDefinite("true covariance".into()))?.l())
    } else {
        None
    };
    let gamma = vec![1.0; p0];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = Vec::with_capacity(n * m * p0);
    let mut x = Vec::with_capacity(n * m * size);
    let mut mu = Vec::with_capacity(n * m);
    let mut y = Vec::with_capacity(n * m);
    let mut w = vec![0.0; m];
    for _ in 0..n {
        for _ in 0..m {
            let zs = z.len();
            z.extend((0..p0).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let xs = x.len();
            x.extend((0..size).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let eta = crate::tensor::dot(&z[zs..], &gamma) + crate::tensor::dot(&x[xs..], b.vec());
            mu.push(eta);
        }
        let base = mu.len() - m;
        match &chol {
            Some(l) => {
                w.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                for j in 0..m {
                    let e: f64 = (0..=j).map(|k| l[(j, k)] * w[k]).sum();
                    y.push(mu[base + j] + e);
                }
            }
            None => y.extend_from_slice(&mu[base..]),
        }
    }
    let data = LongitudinalDataset::new(n, m, p0, b.dims().to_vec(), Family::Gaussian, y, z, x)?;
    Ok((data, Truth { b: b.clone(), gamma, mu }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationMetrics {
    pub bias2: f64,
    pub variance: f64,
    pub mse: f64,
    /// Standard error of the MSE across replicates.
    pub mse_se: f64,
    pub replicates: usize,
}

/// Bias-variance decomposition of replicate estimates, summed over tensor
/// entries.
pub fn estimation_metrics(estimates: &[DenseTensor], truth: &DenseTensor) -> Result<EstimationMetrics> {
    if estimates.len() < 2 {
        return Err(TgeeError::InvalidInput("need at least 2 replicate estimates".into()));
    }
    if let Some(bad) = estimates.iter().find(|e| e.dims() != truth.dims()) {
        return Err(TgeeError::DimensionMismatch(format!(
            "replicate dims {:?} vs truth dims {:?}",
            bad.dims(),
            truth.dims()
        )));
    }
    let k = estimates.len() as f64;
    let len = truth.len();
    let mut mean = vec![0.0; len];
    for e in estimates {
        for (acc, v) in mean.iter_mut().zip(e.vec()) {
            *acc += v / k;
        }
    }
    let bias2: f64 = mean.iter().zip(truth.vec()).map(|(a, b)| (a - b) * (a - b)).sum();
    let variance: f64 = estimates
        .iter()
        .map(|e| e.vec().iter().zip(&mean).map(|(v, a)| (v - a) * (v - a)).sum::<f64>())
        .sum::<f64>()
        / k;
    let sq_err: Vec<f64> = estimates
        .iter()
        .map(|e| e.vec().iter().zip(truth.vec()).map(|(v, t)| (v - t) * (v - t)).sum())
        .collect();
    let mean_err = sq_err.iter().sum::<f64>() / k;
    let sd = (sq_err.iter().map(|s| (s - mean_err).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok(EstimationMetrics { bias2, variance, mse: bias2 + variance, mse_se: sd / k.sqrt(), replicates: estimates.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub rmse: f64,
    /// Pearson correlation; `None` when either vector has zero variance.
    pub corr: Option<f64>,
}

pub fn prediction_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<PredictionMetrics> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(TgeeError::InvalidInput(format!(
            "prediction metrics need equal lengths >= 2, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len() as f64;
    let rmse = (y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt();
    let (ma, mb) = (y_true.iter().sum::<f64>() / n, y_pred.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in y_true.iter().zip(y_pred) {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    let corr = (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt());
    Ok(PredictionMetrics { rmse, corr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub shape: ShapeKind,
    pub n_list: Vec<usize>,
    pub m: usize,
    pub reps: usize,
    pub corr_list: Vec<CorrKind>,
    pub rank: usize,
    pub seed: u64,
    pub sigma2: f64,
    pub rho: f64,
    pub grid: (usize, usize),
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Butterfly,
            n_list: vec![50, 100, 150],
            m: 10,
            reps: 100,
            corr_list: vec![CorrKind::Exchangeable, CorrKind::Ar1, CorrKind::Independence],
            rank: 4,
            seed: 0,
            sigma2: 1.0,
            rho: 0.8,
            grid: (64, 64),
            tol: 1e-4,
            max_outer: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub corr: CorrKind,
    pub metrics: EstimationMetrics,
    pub converged: usize,
}

/// Replicated fits under each working correlation; replicate `r` uses seed
/// `seed + r` for both data and initialization, so the working structures are
/// compared on identical datasets. Replicates run on the current rayon pool.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let truth = make_shape(cfg.shape, cfg.grid.0, cfg.grid.1)?;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let per_rep: Vec<Vec<(DenseTensor, bool)>> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let seed = cfg.seed.wrapping_add(r as u64);
                let sim = SimConfig {
                    n,
                    m: cfg.m,
                    sigma2: cfg.sigma2,
                    rho: cfg.rho,
                    shape: cfg.shape,
                    grid: cfg.grid,
                    seed,
                    ..SimConfig::default()
                };
                let (data, _) = simulate_with_truth(&sim, &truth)?;
                cfg.corr_list
                    .iter()
                    .map(|&corr| {
                        let fc = FitConfig::new(cfg.rank).corr(corr).seed(seed).tol(cfg.tol).max_outer(cfg.max_outer);
                        fit(&data, &fc).map(|f| (f.coefficient_tensor(), f.converged))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (c, &corr) in cfg.corr_list.iter().enumerate() {
            let ests: Vec<DenseTensor> = per_rep.iter().map(|r| r[c].0.clone()).collect();
            let converged = per_rep.iter().filter(|r| r[c].1).count();
            let metrics = estimation_metrics(&ests, &truth)?;
            rows.push(BenchRow { n, m: cfg.m, corr, metrics, converged });
        }
    }
    Ok(rows)
}

/// Relative Frobenius error `||est - truth|| / ||truth||`.
pub fn relative_error(est: &DenseTensor, truth: &DenseTensor) -> f64 {
    let diff: f64 = est.vec().iter().zip(truth.vec()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diff / truth.frobenius_norm().max(f64::MIN_POSITIVE)
}

/// Sample correlation between time points `j` and `k` of an `n x m` matrix.
pub fn column_correlation(e: &DMatrix<f64>, j: usize, k: usize) -> f64 {
    let a: Vec<f64> = e.column(j).iter().copied().collect();
    let b: Vec<f64> = e.column(k).iter().copied().collect();
    prediction_metrics(&a, &b).ok().and_then(|p| p.corr).unwrap_or(f64::NAN)
}
