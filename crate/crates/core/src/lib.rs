//! Tensor generalized estimating equations.
//!
//! Regression of longitudinal responses on vector covariates `Z_ij` and
//! multidimensional-array covariates `X_ij` through
//! `theta_ij = gamma' Z_ij + <B, X_ij>`, where the coefficient tensor `B` has a
//! rank-R CP decomposition. Estimation alternates weighted least-squares
//! solves of the estimating equations over the CP factors and `gamma`.

pub mod correlation;
pub mod data;
pub mod error;
pub mod family;
pub mod inference;
pub mod io;
pub mod penalty;
pub mod selection;
pub mod sim;
pub mod solver;
pub mod tensor;

pub use correlation::{CorrKind, WorkingCorrelation};
pub use data::LongitudinalDataset;
pub use error::{Result, TgeeError};
pub use family::Family;
pub use inference::{sandwich, wald, SandwichEstimate};
pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use penalty::Penalty;
pub use selection::{select_lambda, select_rank, RankSelection};
pub use solver::{fit, FitConfig, FitResult};
pub use tensor::{CpModel, DenseTensor};
