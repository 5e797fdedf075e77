use crate::error::{Result, TgeeError};
use crate::family::Family;
use crate::tensor::DenseTensor;

/// Balanced longitudinal data: `n` subjects observed at `m` time points.
///
/// Observations are stored subject-major: observation `(i, j)` sits at flat
/// index `i * m + j`. Each tensor covariate is stored as `vec(X_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    n: usize,
    m: usize,
    p0: usize,
    dims: Vec<usize>,
    family: Family,
    y: Vec<f64>,
    z: Vec<f64>,
    x: Vec<f64>,
}

impl LongitudinalDataset {
    /// `y` is `n*m`, `z` is `n*m*p0` and `x` is `n*m*prod(dims)`, all subject-major.
    pub fn new(
        n: usize,
        m: usize,
        p0: usize,
        dims: Vec<usize>,
        family: Family,
        y: Vec<f64>,
        z: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(TgeeError::InvalidInput("need at least one time point".into()));
        }
        if dims.is_empty() || dims.iter().any(|&p| p == 0) {
            return Err(TgeeError::InvalidInput(format!("bad tensor dims {dims:?}")));
        }
        let nobs = n * m;
        let size: usize = dims.iter().product();
        for (name, got, want) in
            [("Y", y.len(), nobs), ("Z", z.len(), nobs * p0), ("X", x.len(), nobs * size)]
        {
            if got != want {
                return Err(TgeeError::DimensionMismatch(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        Ok(Self { n, m, p0, dims, family, y, z, x })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p0(&self) -> usize {
        self.p0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn tensor_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn n_obs(&self) -> usize {
        self.n * self.m
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_subject(&self, i: usize) -> &[f64] {
        &self.y[i * self.m..(i + 1) * self.m]
    }

    pub fn z_all(&self) -> &[f64] {
        &self.z
    }

    pub fn x_all(&self) -> &[f64] {
        &self.x
    }

    /// Vector covariate of flat observation `k`.
    pub fn z_obs(&self, k: usize) -> &[f64] {
        &self.z[k * self.p0..(k + 1) * self.p0]
    }

    /// `vec(X)` of flat observation `k`.
    pub fn x_obs(&self, k: usize) -> &[f64] {
        let size = self.tensor_len();
        &self.x[k * size..(k + 1) * size]
    }

    pub fn x_tensor(&self, i: usize, j: usize) -> DenseTensor {
        DenseTensor::new(self.dims.clone(), self.x_obs(i * self.m + j).to_vec())
            .expect("dims validated at construction")
    }

    /// `theta_ij = gamma' Z_ij + <B, X_ij>` for every observation, with `b`
    /// the full coefficient tensor in vec form.
    pub fn linear_predictors(&self, b: &[f64], gamma: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.tensor_len());
        debug_assert_eq!(gamma.len(), self.p0);
        (0..self.n_obs())
            .map(|k| crate::tensor::dot(self.z_obs(k), gamma) + crate::tensor::dot(self.x_obs(k), b))
            .collect()
    }

    /// Keeps the given time points (in order) for every subject.
    pub fn select_times(&self, times: &[usize]) -> Result<Self> {
        if times.is_empty() || times.iter().any(|&t| t >= self.m) {
            return Err(TgeeError::InvalidInput(format!(
                "time selection {times:?} invalid for m={}",
                self.m
            )));
        }
        let m = self.m;
        let order: Vec<usize> =
            (0..self.n).flat_map(|i| times.iter().map(move |&t| i * m + t)).collect();
        self.gather(&order, self.n, times.len())
    }

    /// Keeps the given subjects (in order).
    pub fn select_subjects(&self, subjects: &[usize]) -> Result<Self> {
        if subjects.iter().any(|&i| i >= self.n) {
            return Err(TgeeError::InvalidInput("subject index out of range".into()));
        }
        let m = self.m;
        let order: Vec<usize> =
            subjects.iter().flat_map(|&i| (0..m).map(move |j| i * m + j)).collect();
        self.gather(&order, subjects.len(), m)
    }

    fn gather(&self, order: &[usize], n: usize, m: usize) -> Result<Self> {
        let mut y = Vec::with_capacity(order.len());
        let mut z = Vec::with_capacity(order.len() * self.p0);
        let mut x = Vec::with_capacity(order.len() * self.tensor_len());
        for &k in order {
            y.push(self.y[k]);
            z.extend_from_slice(self.z_obs(k));
            x.extend_from_slice(self.x_obs(k));
        }
        Self::new(n, m, self.p0, self.dims.clone(), self.family, y, z, x)
    }
}
