#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use tgee_core::tensor::{reconstruct, CpModel};
use tgee_core::{DenseTensor, Family, LongitudinalDataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn random_model(dims: &[usize], rank: usize, r: &mut ChaCha8Rng) -> CpModel {
    CpModel::new(dims.iter().map(|&p| DMatrix::from_fn(p, rank, |_, _| normal(r))).collect()).unwrap()
}

pub fn random_tensor(dims: &[usize], r: &mut ChaCha8Rng) -> DenseTensor {
    let len = dims.iter().product();
    DenseTensor::new(dims.to_vec(), (0..len).map(|_| normal(r)).collect()).unwrap()
}

/// Small dataset drawn from a random CP truth, with responses from `family`
/// and subject-level shared noise for the gaussian case.
pub fn random_dataset(
    n: usize,
    m: usize,
    p0: usize,
    dims: &[usize],
    rank: usize,
    family: Family,
    seed: u64,
) -> (LongitudinalDataset, CpModel, Vec<f64>) {
    let mut r = rng(seed);
    let mut truth = random_model(dims, rank, &mut r);
    // keep natural parameters moderate for the non-gaussian families
    let scale = if family == Family::Gaussian { 1.0 } else { 0.3 };
    let f0 = truth.factor(0) * scale;
    truth.set_factor(0, f0);
    let gamma: Vec<f64> = (0..p0).map(|k| 0.5 - 0.25 * k as f64).collect();
    let b = reconstruct(&truth);
    let size = b.len();
    let (mut y, mut z, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let shared = normal(&mut r);
        for _ in 0..m {
            let zs: Vec<f64> = (0..p0).map(|_| normal(&mut r)).collect();
            let xs: Vec<f64> = (0..size).map(|_| normal(&mut r) * scale).collect();
            let eta: f64 = zs.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>()
                + xs.iter().zip(b.vec()).map(|(a, b)| a * b).sum::<f64>();
            let v = match family {
                Family::Gaussian => eta + 0.6 * shared + 0.8 * normal(&mut r),
                Family::Binomial => {
                    let p = family.mean(eta);
                    Bernoulli::new(p).unwrap().sample(&mut r) as u8 as f64
                }
                Family::Poisson => {
                    let mu = family.mean(eta);
                    Poisson::new(mu).unwrap().sample(&mut r)
                }
            };
            y.push(v);
            z.extend(zs);
            x.extend(xs);
        }
    }
    let data = LongitudinalDataset::new(n, m, p0, dims.to_vec(), family, y, z, x).unwrap();
    (data, truth, gamma)
}

/// Design row of factor `d` obtained by probing the linear map
/// `B_d -> <B, X>` with unit matrices, without any Khatri-Rao machinery.
pub fn probed_factor_row(model: &CpModel, d: usize, x: &[f64]) -> Vec<f64> {
    let f = model.factor(d);
    let mut out = Vec::with_capacity(f.len());
    for r in 0..f.ncols() {
        for a in 0..f.nrows() {
            let mut probe = model.clone();
            let mut e = DMatrix::zeros(f.nrows(), f.ncols());
            e[(a, r)] = 1.0;
            probe.set_factor(d, e);
            let b = reconstruct(&probe);
            out.push(b.vec().iter().zip(x).map(|(u, v)| u * v).sum());
        }
    }
    out
}

/// Dense inverse through LU, independent of the library's closed forms.
pub fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("invertible")
}

/// Stacked-design generalized least squares:
/// `(sum_i G_i' W G_i)^{-1} sum_i G_i' W (y_i - o_i)`.
pub fn gls(rows: &[Vec<f64>], y: &[f64], offset: &[f64], m: usize, w: &DMatrix<f64>) -> DVector<f64> {
    let q = rows[0].len();
    let n = y.len() / m;
    let mut h = DMatrix::zeros(q, q);
    let mut c = DVector::zeros(q);
    for i in 0..n {
        let g = DMatrix::from_fn(m, q, |j, t| rows[i * m + j][t]);
        let res = DVector::from_fn(m, |j, _| y[i * m + j] - offset[i * m + j]);
        h += g.transpose() * w * &g;
        c += g.transpose() * w * res;
    }
    h.lu().solve(&c).expect("non-singular oracle system")
}

/// Ordinary GLM fit of `y` on `z` by textbook iteratively reweighted least squares.
pub fn irls(y: &[f64], z: &[f64], p0: usize, family: Family) -> DVector<f64> {
    let nobs = y.len();
    let zm = DMatrix::from_row_slice(nobs, p0, z);
    let mut beta = DVector::zeros(p0);
    for _ in 0..200 {
        let eta = &zm * &beta;
        let mu: Vec<f64> = eta.iter().map(|&t| family.mean(t)).collect();
        let w: Vec<f64> = eta.iter().map(|&t| family.variance(t)).collect();
        let work = DVector::from_fn(nobs, |k, _| eta[k] + (y[k] - mu[k]) / w[k]);
        let wz = DMatrix::from_fn(nobs, p0, |k, j| w[k] * zm[(k, j)]);
        let next = (zm.transpose() * &wz).lu().solve(&(wz.transpose() * work)).unwrap();
        let done = (&next - &beta).amax() < 1e-14;
        beta = next;
        if done {
            break;
        }
    }
    beta
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
