//! Exponential-family mean and variance functions under canonical links.
//! Dispersion is fixed at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TgeeError};
use crate::tensor::{inner, reconstruct, CpModel, DenseTensor};

/// Natural-parameter bound applied before exponentiation.
pub const THETA_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Gaussian,
    Binomial,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
        }
    }

    /// Inverse canonical link `mu(theta)`.
    pub fn mean(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => theta,
            Family::Binomial => {
                let t = theta.clamp(-THETA_CLAMP, THETA_CLAMP);
                1.0 / (1.0 + (-t).exp())
            }
            Family::Poisson => theta.clamp(-THETA_CLAMP, THETA_CLAMP).exp(),
        }
    }

    /// `sigma^2(theta) = mu'(theta)` with unit dispersion.
    pub fn variance(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => {
                let mu = self.mean(theta);
                mu * (1.0 - mu)
            }
            Family::Poisson => self.mean(theta),
        }
    }

    /// Log-likelihood contribution of one response at natural parameter `theta`.
    pub fn log_likelihood(self, y: f64, theta: f64) -> f64 {
        match self {
            Family::Gaussian => {
                let r = y - theta;
                -0.5 * r * r - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Family::Binomial => {
                let t = theta.clamp(-THETA_CLAMP, THETA_CLAMP);
                // log(1 + e^t) computed stably
                let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                y * t - softplus
            }
            Family::Poisson => {
                let t = theta.clamp(-THETA_CLAMP, THETA_CLAMP);
                y * t - t.exp() - statrs::function::gamma::ln_gamma(y + 1.0)
            }
        }
    }

    /// Unit deviance `2 * (l(y; saturated) - l(y; mu))`.
    pub fn deviance(self, y: f64, mu: f64) -> f64 {
        fn ylogy(y: f64, m: f64) -> f64 {
            if y == 0.0 {
                0.0
            } else {
                y * (y / m).ln()
            }
        }
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Binomial => 2.0 * (ylogy(y, mu) + ylogy(1.0 - y, 1.0 - mu)),
            Family::Poisson => 2.0 * (ylogy(y, mu) - (y - mu)),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = TgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            other => Err(TgeeError::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `theta = gamma' z + <B, X>`. Reconstructs `B`; solver hot paths use
/// precomputed tensors instead.
pub fn linear_predictor(gamma: &[f64], z: &[f64], m: &CpModel, x: &DenseTensor) -> Result<f64> {
    if gamma.len() != z.len() {
        return Err(TgeeError::DimensionMismatch(format!(
            "gamma has length {}, z has length {}",
            gamma.len(),
            z.len()
        )));
    }
    let b = reconstruct(m);
    Ok(crate::tensor::dot(gamma, z) + inner(&b, x)?)
}
