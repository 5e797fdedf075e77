//! Separable penalties on factor entries and the cyclic coordinate-descent
//! solver for the penalized weighted least-squares sub-problem
//!
//! ```text
//! minimize  1/2 b' H b - c' b + sum_k P(|b_k|; rho)
//! ```
//!
//! where `H = G~' G~` and `c = G~' u~` come from the whitened block design.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgeeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Penalty {
    #[default]
    None,
    /// `rho |b|`
    Lasso,
    /// `rho b^2`
    Ridge,
    /// `rho [(alpha - 1) b^2 / 2 + (2 - alpha) |b|]`, `alpha in [1, 2]`.
    Enet { alpha: f64 },
    /// Derivative `rho {1(|b| <= rho) + (a rho - |b|)_+ / ((a - 1) rho) 1(|b| > rho)}`, `a > 2`.
    Scad { a: f64 },
}

impl Penalty {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Penalty::Enet { alpha } if !(1.0..=2.0).contains(&alpha) => Err(TgeeError::InvalidInput(
                format!("elastic-net alpha must lie in [1, 2], got {alpha}"),
            )),
            Penalty::Scad { a } if !(a > 2.0) => {
                Err(TgeeError::InvalidInput(format!("SCAD a must exceed 2, got {a}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Penalty::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Penalty::None => "none",
            Penalty::Lasso => "lasso",
            Penalty::Ridge => "ridge",
            Penalty::Enet { .. } => "enet",
            Penalty::Scad { .. } => "scad",
        }
    }

    /// `P(|b|; rho)`.
    pub fn value(&self, b: f64, rho: f64) -> f64 {
        let t = b.abs();
        match *self {
            Penalty::None => 0.0,
            Penalty::Lasso => rho * t,
            Penalty::Ridge => rho * t * t,
            Penalty::Enet { alpha } => rho * ((alpha - 1.0) * t * t / 2.0 + (2.0 - alpha) * t),
            Penalty::Scad { a } => {
                if t <= rho {
                    rho * t
                } else if t <= a * rho {
                    (2.0 * a * rho * t - t * t - rho * rho) / (2.0 * (a - 1.0))
                } else {
                    rho * rho * (a + 1.0) / 2.0
                }
            }
        }
    }

    /// `dP/d|b|` at `|b| = t > 0`, or the right derivative at 0.
    pub fn derivative(&self, t: f64, rho: f64) -> f64 {
        let t = t.abs();
        match *self {
            Penalty::None => 0.0,
            Penalty::Lasso => rho,
            Penalty::Ridge => 2.0 * rho * t,
            Penalty::Enet { alpha } => rho * ((alpha - 1.0) * t + (2.0 - alpha)),
            Penalty::Scad { a } => {
                if t <= rho {
                    rho
                } else {
                    (a * rho - t).max(0.0) / (a - 1.0)
                }
            }
        }
    }

    /// Minimizer of `h/2 b^2 - z b + P(|b|; rho)` for curvature `h >= 0`.
    pub fn coordinate_update(&self, z: f64, h: f64, rho: f64) -> f64 {
        if h <= 0.0 {
            // Flat quadratic: only the penalty (if any) pins the coordinate.
            return 0.0;
        }
        match *self {
            Penalty::None => z / h,
            Penalty::Lasso => soft_threshold(z, rho) / h,
            Penalty::Ridge => z / (h + 2.0 * rho),
            Penalty::Enet { alpha } => {
                soft_threshold(z, rho * (2.0 - alpha)) / (h + rho * (alpha - 1.0))
            }
            Penalty::Scad { a } => {
                // Stationary points of each piece; the one-dimensional objective
                // may be non-convex when h < 1/(a-1), so pick the best candidate.
                let s = z.signum();
                let mut cands = [0.0, soft_threshold(z, rho) / h, z / h, s * rho, s * a * rho, 0.0];
                let curv = h - 1.0 / (a - 1.0);
                if curv > 0.0 {
                    cands[5] = soft_threshold(z, a * rho / (a - 1.0)) / curv;
                }
                let obj = |b: f64| 0.5 * h * b * b - z * b + self.value(b, rho);
                cands.into_iter().fold(0.0, |best, b| if obj(b) < obj(best) { b } else { best })
            }
        }
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Result of a coordinate-descent solve.
#[derive(Debug, Clone)]
pub struct CdOutcome {
    pub coef: DVector<f64>,
    pub sweeps: usize,
    /// Objective after each full sweep (constant term excluded).
    pub objective_trace: Vec<f64>,
}

/// `1/2 b'Hb - c'b + sum P(|b_k|)`.
pub fn penalized_objective(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    b: &DVector<f64>,
    penalty: &Penalty,
    rho: f64,
) -> f64 {
    0.5 * b.dot(&(h * b)) - c.dot(b) + b.iter().map(|&v| penalty.value(v, rho)).sum::<f64>()
}

/// Cyclic coordinate descent in Gram form, warm-started at `start`.
pub fn coordinate_descent(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    start: &DVector<f64>,
    penalty: &Penalty,
    rho: f64,
    tol: f64,
    max_sweeps: usize,
) -> CdOutcome {
    let q = c.len();
    let mut b = start.clone();
    let mut hb = h * &b;
    let mut trace = Vec::new();
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_delta = 0.0_f64;
        let mut max_coef = 0.0_f64;
        for k in 0..q {
            let hkk = h[(k, k)];
            let z = c[k] - hb[k] + hkk * b[k];
            let new = penalty.coordinate_update(z, hkk, rho);
            let delta = new - b[k];
            if delta != 0.0 {
                hb.axpy(delta, &h.column(k), 1.0);
                b[k] = new;
            }
            max_delta = max_delta.max(delta.abs());
            max_coef = max_coef.max(new.abs());
        }
        trace.push(0.5 * b.dot(&hb) - c.dot(&b) + b.iter().map(|&v| penalty.value(v, rho)).sum::<f64>());
        if max_delta <= tol * max_coef.max(1.0) {
            break;
        }
    }
    CdOutcome { coef: b, sweeps, objective_trace: trace }
}
