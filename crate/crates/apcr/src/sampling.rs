//! Small random-generation helpers shared by the simulators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Uniform point on the unit sphere of R^len.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    loop {
        let g = gaussian_vector(rng, len, 1.0);
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Orthonormal basis of a uniformly random r-dimensional subspace of R^d.
pub fn random_subspace<R: Rng + ?Sized>(rng: &mut R, d: usize, r: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, d, r, 1.0).qr().q()
}
