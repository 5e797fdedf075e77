//! Alternating block solver for the tensor GEE.
//!
//! Each sub-problem is linear in its block: for factor `B_d` the design row
//! of observation `(i, j)` is `vec(X_ij(d) K_d)` with `K_d` the Khatri-Rao
//! chain of the other factors, and for `gamma` it is `Z_ij`. A block is solved
//! by Fisher scoring on the whitened system
//!
//! ```text
//! H = sum_i G_i' A_i^{1/2} R^-1 A_i^{1/2} G_i,   c = sum_i G_i' A_i^{1/2} R^-1 A_i^{1/2} u_i
//! ```
//!
//! with working response `u = G b + A^-1 (y - mu)`, exactly (one step) for the
//! Gaussian family, and by cyclic coordinate descent on the same Gram system
//! when a penalty is active.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlation::{estimate, pearson_from_eta, CorrKind, WorkingCorrelation};
use crate::data::LongitudinalDataset;
use crate::error::{Result, TgeeError};
use crate::family::Family;
use crate::penalty::{coordinate_descent, soft_threshold, Penalty};
use crate::tensor::{normalize, reconstruct, CpModel, ModeProjector};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_PENALIZED_TOL: f64 = 1e-4;
const INNER_TOL: f64 = 1e-8;
const INNER_MAX_ITER: usize = 25;
const CD_TOL: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 1000;
const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rank: usize,
    pub family: Family,
    pub corr: CorrKind,
    pub penalty: Penalty,
    /// Penalty level; distinct from the correlation parameter.
    pub lambda: f64,
    pub max_outer: usize,
    /// Relative-change tolerance; `None` picks 1e-6, or 1e-4 when penalized.
    pub tol: Option<f64>,
    pub seed: u64,
    pub restarts: usize,
}

impl FitConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            family: Family::Gaussian,
            corr: CorrKind::Independence,
            penalty: Penalty::None,
            lambda: 0.0,
            max_outer: 100,
            tol: None,
            seed: 0,
            restarts: 1,
        }
    }

    pub fn family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn corr(mut self, corr: CorrKind) -> Self {
        self.corr = corr;
        self
    }

    pub fn penalty(mut self, penalty: Penalty, lambda: f64) -> Self {
        self.penalty = penalty;
        self.lambda = lambda;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn max_outer(mut self, max_outer: usize) -> Self {
        self.max_outer = max_outer;
        self
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn effective_tol(&self) -> f64 {
        self.tol.unwrap_or(if self.penalty.is_none() { DEFAULT_TOL } else { DEFAULT_PENALIZED_TOL })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(TgeeError::InvalidInput("rank must be at least 1".into()));
        }
        let tol = self.effective_tol();
        if !(tol > 0.0) {
            return Err(TgeeError::InvalidInput(format!("tolerance must be positive, got {tol}")));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(TgeeError::InvalidInput(format!(
                "penalty level must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.restarts == 0 {
            return Err(TgeeError::InvalidInput("restarts must be at least 1".into()));
        }
        self.penalty.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Normalized CP factors.
    pub model: CpModel,
    pub gamma: Vec<f64>,
    pub wc: WorkingCorrelation,
    pub family: Family,
    pub penalty: Penalty,
    pub lambda: f64,
    pub converged: bool,
    pub outer_iters: usize,
    /// `||s(B, gamma)||_inf`, or its penalized analogue.
    pub ee_norm: f64,
    /// Relative parameter change after each outer sweep.
    pub objective_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn coefficient_tensor(&self) -> crate::tensor::DenseTensor {
        reconstruct(&self.model)
    }

    /// Linear predictors for every observation of `data`.
    pub fn linear_predictors(&self, data: &LongitudinalDataset) -> Result<Vec<f64>> {
        if data.dims() != self.model.dims().as_slice() || data.p0() != self.gamma.len() {
            return Err(TgeeError::DimensionMismatch(format!(
                "model dims {:?} / p0 {} vs data dims {:?} / p0 {}",
                self.model.dims(),
                self.gamma.len(),
                data.dims(),
                data.p0()
            )));
        }
        Ok(data.linear_predictors(reconstruct(&self.model).vec(), &self.gamma))
    }
}

/// The block being solved in an alternating sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Factor(usize),
    Gamma,
}

#[derive(Debug, Clone)]
pub struct BlockUpdate {
    /// New block coefficients: `vec(B_d)` or `gamma`.
    pub coef: DVector<f64>,
    pub inner_iters: usize,
    /// Penalized objective per coordinate-descent sweep of the last inner step.
    pub cd_trace: Vec<f64>,
    pub jittered: bool,
}

/// Per-observation design rows of one block, row-contiguous.
pub(crate) struct BlockDesign {
    pub width: usize,
    pub rows: Vec<f64>,
}

impl BlockDesign {
    fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.width..(k + 1) * self.width]
    }
}

pub(crate) fn block_design(
    data: &LongitudinalDataset,
    model: &CpModel,
    block: Block,
) -> Result<BlockDesign> {
    match block {
        Block::Gamma => Ok(BlockDesign { width: data.p0(), rows: data.z_all().to_vec() }),
        Block::Factor(d) => {
            let proj = ModeProjector::new(model, d)?;
            let width = proj.width();
            let mut rows = vec![0.0; width * data.n_obs()];
            for (k, out) in rows.chunks_exact_mut(width.max(1)).enumerate() {
                proj.project_into(data.x_obs(k), out);
            }
            Ok(BlockDesign { width, rows })
        }
    }
}

/// Lower Cholesky factor `L` with `R^-1 = L L'`.
pub(crate) fn inverse_factor(wc: &WorkingCorrelation) -> Result<DMatrix<f64>> {
    let rinv = wc.inverse()?;
    rinv.cholesky().map(|c| c.l()).ok_or_else(|| {
        TgeeError::NotPositiveDefinite(format!("{} working correlation is not invertible", wc.kind))
    })
}

struct Whitened {
    h: DMatrix<f64>,
    c: DVector<f64>,
}

/// Gram system of the whitened working model at the current block value.
fn whitened_system(
    data: &LongitudinalDataset,
    design: &BlockDesign,
    offset: &[f64],
    b: &DVector<f64>,
    family: Family,
    chol: &DMatrix<f64>,
) -> Result<Whitened> {
    let (n, m, q) = (data.n(), data.m(), design.width);
    let y = data.y();
    let mut mt = DMatrix::<f64>::zeros(q, n * m);
    let mut ut = DVector::<f64>::zeros(n * m);
    let mut a = vec![0.0; m];
    let mut u = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let k = i * m + j;
            let gb: f64 = design.row(k).iter().zip(b.iter()).map(|(g, v)| g * v).sum();
            let eta = offset[k] + gb;
            let var = family.variance(eta);
            if !(var > 0.0) || !var.is_finite() {
                return Err(TgeeError::ZeroVariance { subject: i, time: j });
            }
            a[j] = var.sqrt();
            // a * u = a * G b + (y - mu) / a
            u[j] = a[j] * gb + (y[k] - family.mean(eta)) / a[j];
        }
        for c in 0..m {
            let col = i * m + c;
            let mut uc = 0.0;
            for j in c..m {
                // L is lower triangular: L[j, c] = 0 for j < c
                let l = chol[(j, c)];
                if l == 0.0 {
                    continue;
                }
                uc += l * u[j];
                let w = l * a[j];
                let row = design.row(i * m + j);
                let mut dst = mt.column_mut(col);
                for (t, &g) in row.iter().enumerate() {
                    dst[t] += w * g;
                }
            }
            ut[col] = uc;
        }
    }
    let gt = mt.transpose();
    let h = &mt * &gt;
    let c = &mt * &ut;
    Ok(Whitened { h, c })
}

/// Solves `H b = c`, adding diagonal jitter when `H` is not positive definite.
fn solve_normal(h: &DMatrix<f64>, c: &DVector<f64>, warnings: &mut Vec<String>) -> (DVector<f64>, bool) {
    if let Some(ch) = h.clone().cholesky() {
        return (ch.solve(c), false);
    }
    let dim = h.nrows().max(1);
    let jitter = JITTER * h.trace() / dim as f64;
    let msg = format!("singular block normal matrix (dim {dim}); added diagonal jitter {jitter:.3e}");
    log::warn!("{msg}");
    warnings.push(msg);
    if jitter > 0.0 {
        let mut hj = h.clone();
        for k in 0..h.nrows() {
            hj[(k, k)] += jitter;
        }
        if let Some(ch) = hj.cholesky() {
            return (ch.solve(c), true);
        }
    }
    // Fully degenerate (e.g. an all-zero design): minimum-norm solution.
    let svd = h.clone().svd(true, true);
    let sol = svd.solve(c, 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE)).unwrap_or_else(|_| DVector::zeros(c.len()));
    (sol, true)
}

#[allow(clippy::too_many_arguments)]
fn solve_block(
    data: &LongitudinalDataset,
    design: &BlockDesign,
    offset: &[f64],
    start: &DVector<f64>,
    family: Family,
    chol: &DMatrix<f64>,
    penalty: &Penalty,
    lambda: f64,
    warnings: &mut Vec<String>,
) -> Result<BlockUpdate> {
    let mut b = start.clone();
    let mut jittered = false;
    let mut cd_trace = Vec::new();
    let max_iter = if family == Family::Gaussian { 1 } else { INNER_MAX_ITER };
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        let sys = whitened_system(data, design, offset, &b, family, chol)?;
        let next = if penalty.is_none() {
            let (sol, j) = solve_normal(&sys.h, &sys.c, warnings);
            jittered |= j;
            sol
        } else {
            let cd = coordinate_descent(&sys.h, &sys.c, &b, penalty, lambda, CD_TOL, CD_MAX_SWEEPS);
            cd_trace = cd.objective_trace;
            cd.coef
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(TgeeError::NonFinite("block update produced non-finite coefficients".into()));
        }
        let delta = (&next - &b).amax();
        let scale = 1.0 + next.amax();
        b = next;
        if delta <= INNER_TOL * scale {
            break;
        }
    }
    Ok(BlockUpdate { coef: b, inner_iters: iters, cd_trace, jittered })
}

/// Current value of a block as a flat vector.
fn block_value(model: &CpModel, gamma: &[f64], block: Block) -> DVector<f64> {
    match block {
        Block::Factor(d) => DVector::from_column_slice(model.factor(d).as_slice()),
        Block::Gamma => DVector::from_column_slice(gamma),
    }
}

/// Linear-predictor contribution of everything outside `block`.
fn block_offset(data: &LongitudinalDataset, model: &CpModel, gamma: &[f64], block: Block) -> Vec<f64> {
    match block {
        // <B, X> is linear in B_d, so the whole tensor term moves with the block.
        Block::Factor(_) => (0..data.n_obs()).map(|k| crate::tensor::dot(data.z_obs(k), gamma)).collect(),
        Block::Gamma => {
            let b = reconstruct(model);
            (0..data.n_obs()).map(|k| crate::tensor::dot(data.x_obs(k), b.vec())).collect()
        }
    }
}

/// Solves the sub-GEE for one block with every other block held fixed.
#[allow(clippy::too_many_arguments)]
pub fn block_update(
    data: &LongitudinalDataset,
    model: &CpModel,
    gamma: &[f64],
    block: Block,
    wc: &WorkingCorrelation,
    family: Family,
    penalty: &Penalty,
    lambda: f64,
) -> Result<BlockUpdate> {
    check_compat(data, model, gamma)?;
    if let Block::Factor(d) = block {
        if d >= model.order() {
            return Err(TgeeError::ModeOutOfRange { mode: d, order: model.order() });
        }
    }
    if wc.dim() != data.m() {
        return Err(TgeeError::DimensionMismatch(format!(
            "working correlation is {}x{}, data has m={}",
            wc.dim(),
            wc.dim(),
            data.m()
        )));
    }
    let chol = inverse_factor(wc)?;
    let mut warnings = Vec::new();
    update_with(data, model, gamma, block, &chol, family, penalty, lambda, &mut warnings)
}

#[allow(clippy::too_many_arguments)]
fn update_with(
    data: &LongitudinalDataset,
    model: &CpModel,
    gamma: &[f64],
    block: Block,
    chol: &DMatrix<f64>,
    family: Family,
    penalty: &Penalty,
    lambda: f64,
    warnings: &mut Vec<String>,
) -> Result<BlockUpdate> {
    let design = block_design(data, model, block)?;
    let offset = block_offset(data, model, gamma, block);
    let start = block_value(model, gamma, block);
    // gamma is never penalized
    let pen = if block == Block::Gamma { Penalty::None } else { *penalty };
    solve_block(data, &design, &offset, &start, family, chol, &pen, lambda, warnings)
}

fn check_compat(data: &LongitudinalDataset, model: &CpModel, gamma: &[f64]) -> Result<()> {
    if data.dims() != model.dims().as_slice() {
        return Err(TgeeError::DimensionMismatch(format!(
            "model dims {:?} vs data dims {:?}",
            model.dims(),
            data.dims()
        )));
    }
    if gamma.len() != data.p0() {
        return Err(TgeeError::DimensionMismatch(format!(
            "gamma has length {}, data has p0={}",
            gamma.len(),
            data.p0()
        )));
    }
    Ok(())
}

/// Random factor initialization: i.i.d. `N(0, 1) / sqrt(p_d R)`.
pub fn random_init(dims: &[usize], rank: usize, seed: u64) -> Result<CpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = dims
        .iter()
        .map(|&p| {
            let scale = 1.0 / ((p * rank) as f64).sqrt();
            DMatrix::from_fn(p, rank, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
        })
        .collect();
    CpModel::new(factors)
}

struct Sweeper<'a> {
    data: &'a LongitudinalDataset,
    family: Family,
    penalty: Penalty,
    lambda: f64,
    warnings: Vec<String>,
}

struct LoopOutcome {
    model: CpModel,
    gamma: Vec<f64>,
    wc: WorkingCorrelation,
    converged: bool,
    iters: usize,
    trace: Vec<f64>,
}

impl Sweeper<'_> {
    fn sweep(&mut self, model: &mut CpModel, gamma: &mut Vec<f64>, chol: &DMatrix<f64>) -> Result<()> {
        for d in 0..model.order() {
            let upd = update_with(
                self.data, model, gamma, Block::Factor(d), chol, self.family, &self.penalty, self.lambda,
                &mut self.warnings,
            )?;
            let (p, r) = model.factor(d).shape();
            model.set_factor(d, DMatrix::from_column_slice(p, r, upd.coef.as_slice()));
        }
        if self.data.p0() > 0 {
            let upd = update_with(
                self.data, model, gamma, Block::Gamma, chol, self.family, &self.penalty, self.lambda,
                &mut self.warnings,
            )?;
            gamma.copy_from_slice(upd.coef.as_slice());
        }
        if self.penalty.is_none() {
            // Rescaling leaves the tensor unchanged and keeps factor scales bounded.
            *model = normalize(model);
        }
        Ok(())
    }

    /// Alternating sweeps; `kind` controls whether the working correlation is
    /// re-estimated after each sweep.
    fn run(
        &mut self,
        mut model: CpModel,
        mut gamma: Vec<f64>,
        mut wc: WorkingCorrelation,
        kind: CorrKind,
        max_outer: usize,
        tol: f64,
    ) -> Result<LoopOutcome> {
        let mut prev = stacked(&model, &gamma);
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iters = 0;
        while iters < max_outer {
            iters += 1;
            let chol = inverse_factor(&wc)?;
            self.sweep(&mut model, &mut gamma, &chol)?;
            let cur = stacked(&model, &gamma);
            let diff = cur.iter().zip(&prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm = prev.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = if diff == 0.0 { 0.0 } else { diff / norm.max(1e-12) };
            if !rel.is_finite() || cur.iter().any(|v| !v.is_finite()) {
                return Err(TgeeError::NonFinite(format!("outer iteration {iters} diverged")));
            }
            trace.push(rel);
            prev = cur;
            if kind != CorrKind::Independence {
                let eta = self.data.linear_predictors(reconstruct(&model).vec(), &gamma);
                wc = estimate(kind, &pearson_from_eta(self.data, &eta, self.family)?)?;
            }
            if rel < tol {
                converged = true;
                break;
            }
        }
        Ok(LoopOutcome { model, gamma, wc, converged, iters, trace })
    }
}

fn stacked(model: &CpModel, gamma: &[f64]) -> Vec<f64> {
    let mut v = reconstruct(model).into_vec();
    v.extend_from_slice(gamma);
    v
}

fn validate_data(data: &LongitudinalDataset) -> Result<()> {
    if data.n() == 0 {
        return Err(TgeeError::InvalidInput("dataset has no subjects".into()));
    }
    if data.y().iter().any(|v| !v.is_finite()) {
        return Err(TgeeError::NonFinite("responses contain non-finite values".into()));
    }
    Ok(())
}

/// Fit under the independence working correlation, ignoring intra-subject
/// correlation.
pub fn fit_independence_init(
    data: &LongitudinalDataset,
    rank: usize,
    family: Family,
    seed: u64,
) -> Result<FitResult> {
    let cfg = FitConfig::new(rank).family(family).seed(seed);
    cfg.validate()?;
    validate_data(data)?;
    independence_init(data, &cfg, seed)
}

fn independence_init(data: &LongitudinalDataset, cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    let mut sweeper = Sweeper { data, family: cfg.family, penalty: Penalty::None, lambda: 0.0, warnings: Vec::new() };
    let model = random_init(data.dims(), cfg.rank, seed)?;
    let gamma = vec![0.0; data.p0()];
    let wc = WorkingCorrelation::identity(data.m());
    let out = sweeper.run(model, gamma, wc, CorrKind::Independence, cfg.max_outer, DEFAULT_TOL.min(cfg.effective_tol()))?;
    finish(data, out, cfg.family, Penalty::None, 0.0, sweeper.warnings)
}

fn finish(
    data: &LongitudinalDataset,
    out: LoopOutcome,
    family: Family,
    penalty: Penalty,
    lambda: f64,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let model = normalize(&out.model);
    let s = ee_residual(data, &model, &out.gamma, &out.wc, family)?;
    let ee_norm = penalized_ee(&s, &model, &penalty, lambda).amax();
    if out.wc.clamped {
        warnings.push(format!("working correlation parameter clamped to {:?}", out.wc.param));
    }
    if !out.converged {
        warnings.push(format!("did not converge in {} outer iterations", out.iters));
    }
    Ok(FitResult {
        model,
        gamma: out.gamma,
        wc: out.wc,
        family,
        penalty,
        lambda,
        converged: out.converged,
        outer_iters: out.iters,
        ee_norm,
        objective_trace: out.trace,
        warnings,
    })
}

/// Full tensor GEE fit: independence initialization, moment estimate of the
/// working correlation, then alternating sweeps over `B_1..B_D, gamma` with the
/// correlation re-estimated after each sweep.
pub fn fit(data: &LongitudinalDataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    validate_data(data)?;
    let mut best: Option<FitResult> = None;
    for restart in 0..cfg.restarts {
        let res = fit_once(data, cfg, cfg.seed.wrapping_add(restart as u64))?;
        let better = match &best {
            None => true,
            Some(b) => (res.converged, -res.ee_norm) > (b.converged, -b.ee_norm),
        };
        if better {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_once(data: &LongitudinalDataset, cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    let init = independence_init(data, cfg, seed)?;
    let mut warnings = init.warnings.clone();
    let eta = init.linear_predictors(data)?;
    let wc = estimate(cfg.corr, &pearson_from_eta(data, &eta, cfg.family)?)?;
    let mut sweeper = Sweeper { data, family: cfg.family, penalty: cfg.penalty, lambda: cfg.lambda, warnings: Vec::new() };
    let out = sweeper.run(init.model, init.gamma, wc, cfg.corr, cfg.max_outer, cfg.effective_tol())?;
    warnings.append(&mut sweeper.warnings);
    finish(data, out, cfg.family, cfg.penalty, cfg.lambda, warnings)
}

/// Left-hand side `s(B, gamma)` of the tensor GEE, stacked as
/// `[vec(B_1); ...; vec(B_D); gamma]`.
pub fn ee_residual(
    data: &LongitudinalDataset,
    model: &CpModel,
    gamma: &[f64],
    wc: &WorkingCorrelation,
    family: Family,
) -> Result<DVector<f64>> {
    check_compat(data, model, gamma)?;
    let (n, m) = (data.n(), data.m());
    if wc.dim() != m {
        return Err(TgeeError::DimensionMismatch(format!("working correlation dim {} vs m={m}", wc.dim())));
    }
    let rinv = wc.inverse()?;
    let projs: Vec<ModeProjector> =
        (0..model.order()).map(|d| ModeProjector::new(model, d)).collect::<Result<_>>()?;
    let widths: Vec<usize> = projs.iter().map(|p| p.width()).collect();
    let total = widths.iter().sum::<usize>() + data.p0();
    let b = reconstruct(model);
    let eta = data.linear_predictors(b.vec(), gamma);
    let mut s = DVector::zeros(total);
    let mut row = vec![0.0; total];
    let mut a = DVector::zeros(m);
    let mut scaled = DVector::zeros(m);
    for i in 0..n {
        for j in 0..m {
            let k = i * m + j;
            let var = family.variance(eta[k]);
            if !(var > 0.0) {
                return Err(TgeeError::ZeroVariance { subject: i, time: j });
            }
            a[j] = var.sqrt();
            scaled[j] = (data.y()[k] - family.mean(eta[k])) / a[j];
        }
        // A^{1/2} R^-1 A^{-1/2} (y - mu)
        let v = (&rinv * &scaled).component_mul(&a);
        for j in 0..m {
            let k = i * m + j;
            let mut off = 0;
            for (p, &w) in projs.iter().zip(&widths) {
                p.project_into(data.x_obs(k), &mut row[off..off + w]);
                off += w;
            }
            row[off..].copy_from_slice(data.z_obs(k));
            for (sv, &r) in s.iter_mut().zip(&row) {
                *sv += v[j] * r;
            }
        }
    }
    Ok(s)
}

/// Minimum-norm element of `-s + dP` restricted to the factor entries; `gamma`
/// entries are returned unchanged.
pub(crate) fn penalized_ee(s: &DVector<f64>, model: &CpModel, penalty: &Penalty, lambda: f64) -> DVector<f64> {
    if penalty.is_none() {
        return s.clone();
    }
    let beta = model.param_vec();
    let mut out = s.clone();
    for (k, &b) in beta.iter().enumerate() {
        out[k] = if b != 0.0 {
            s[k] - b.signum() * penalty.derivative(b.abs(), lambda)
        } else {
            soft_threshold(s[k], penalty.derivative(0.0, lambda))
        };
    }
    out
}
