//! Fixtures shared by the solver benchmarks.

use tgee_core::sim::{simulate, ShapeKind, SimConfig};
use tgee_core::LongitudinalDataset;

/// A seeded square-signal dataset on a `grid x grid` coefficient matrix.
pub fn square_dataset(n: usize, m: usize, grid: usize, seed: u64) -> LongitudinalDataset {
    let cfg = SimConfig { n, m, shape: ShapeKind::Square, grid: (grid, grid), seed, ..SimConfig::default() };
    simulate(&cfg).expect("valid simulation config").0
}
