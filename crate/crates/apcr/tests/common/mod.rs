//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use apcr::{BoundConfig, PcrState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthogonal matrix from Gram–Schmidt on a Gaussian matrix.
pub fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = gaussian(rng, d, d);
    let mut q = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut v = g.column(j).into_owned();
        for k in 0..j {
            let qk = q.column(k).into_owned();
            v -= &qk * qk.dot(&v);
        }
        q.set_column(j, &(&v / v.norm()));
    }
    q
}

/// n×d matrix of rank r plus `noise`·Gaussian.
pub fn low_rank(rng: &mut ChaCha8Rng, n: usize, d: usize, r: usize, noise: f64) -> DMatrix<f64> {
    gaussian(rng, n, r) * gaussian(rng, r, d) + gaussian(rng, n, d) * noise
}

/// Singular values by one-sided Jacobi rotations, descending. Independent
/// of nalgebra's bidiagonal SVD.
pub fn jacobi_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut u = if a.nrows() >= a.ncols() { a.clone() } else { a.transpose() };
    let n = u.ncols();
    for _ in 0..100 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma.abs() <= 1e-300 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..u.nrows() {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * x - s * y;
                    u[(i, q)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Random estimator instance with n ≤ 50, d ≤ 10, r ≤ 3 and one action.
pub struct Instance {
    pub state: PcrState,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng(seed);
    let d = rng.random_range(2..=10);
    let r = rng.random_range(1..=3.min(d));
    let n = rng.random_range(r..=50);
    let rho = 10f64.powf(rng.random_range(-3.0..0.0));
    let z = low_rank(&mut rng, n, d, r, 0.1);
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cfg = BoundConfig { rho, ..BoundConfig::new(d, r, 1) };
    let mut state = PcrState::new(cfg).unwrap();
    for i in 0..n {
        let row: Vec<f64> = z.row(i).iter().copied().collect();
        state.observe(&row, 0, y[i]).unwrap();
    }
    Instance { state, z, y }
}
