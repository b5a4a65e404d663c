//! Dense linear algebra for the estimator: truncated SVD, projector
//! distances and the perturbation quantities the bounds are phrased in.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Singular values at or below `RANK_TOL * max(1, σ₁)` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

// Below this size the dense path is always cheap enough.
const ITERATIVE_MIN_DIM: usize = 256;
const OVERSAMPLE: usize = 10;
const MAX_SUBSPACE_ITERS: usize = 300;
const SUBSPACE_RESIDUAL_TOL: f64 = 1e-11;

/// Top-k singular triplets, ordered by decreasing singular value.
///
/// Each right singular vector is signed so that its entry of largest
/// magnitude is nonnegative; the matching left vector is flipped with it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub singular_values: DVector<f64>,
    /// n×k
    pub left: DMatrix<f64>,
    /// d×k
    pub right: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    /// σ_i with the usual 1-based index; zero past the stored values.
    pub fn sigma(&self, i: usize) -> f64 {
        if i == 0 || i > self.k() {
            0.0
        } else {
            self.singular_values[i - 1]
        }
    }

    /// Number of stored singular values above the rank tolerance.
    pub fn numerical_rank(&self) -> usize {
        numerical_rank(self.singular_values.as_slice())
    }

    /// Orthogonal projector V_k V_kᵀ onto the span of the right vectors.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.right * self.right.transpose()
    }

    /// Rank-k reconstruction U Σ Vᵀ.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.left.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.right.transpose()
    }
}

pub fn numerical_rank(singular_values: &[f64]) -> usize {
    let top = singular_values.first().copied().unwrap_or(0.0);
    let cut = rank_cutoff(top);
    singular_values.iter().filter(|s| **s > cut).count()
}

pub fn rank_cutoff(sigma1: f64) -> f64 {
    RANK_TOL * sigma1.max(1.0)
}

fn check_finite(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Top `min(k, n, d)` singular triplets of `a`.
///
/// Small or square-ish problems go through a dense QR-then-SVD path. Large
/// problems with a short truncation use block subspace iteration with a
/// Rayleigh–Ritz step; it only returns once every kept triplet has a
/// residual below `1e-11·σ₁`, and otherwise falls back to the dense path.
pub fn truncated_svd(a: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!("empty {n}x{d} matrix")));
    }
    if k == 0 {
        return Err(Error::InvalidInput("truncation level must be at least 1".into()));
    }
    check_finite(a)?;
    let m = n.min(d);
    let k = k.min(m);

    let (s, u, v) = if m >= ITERATIVE_MIN_DIM && (k + OVERSAMPLE) * 4 <= m {
        match subspace_svd(a, k) {
            Some(t) => t,
            None => dense_svd(a),
        }
    } else {
        dense_svd(a)
    };

    let mut out = TruncatedSvd {
        singular_values: DVector::from_iterator(k, s.iter().take(k).copied()),
        left: u.columns(0, k).into_owned(),
        right: v.columns(0, k).into_owned(),
    };
    fix_signs(&mut out);
    Ok(out)
}

/// All `min(n, d)` singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Ok(DVector::zeros(0));
    }
    check_finite(a)?;
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(DVector::from_vec(s))
}

pub fn operator_norm(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.iter().copied().next().unwrap_or(0.0))
}

/// κ_r(A) = σ₁(A)/σ_r(A).
pub fn condition_number_r(a: &DMatrix<f64>, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidInput("r must be at least 1".into()));
    }
    let (n, d) = a.shape();
    if r > n.min(d) {
        return Err(Error::DegenerateRank(format!("r = {r} exceeds min({n}, {d})")));
    }
    let svd = truncated_svd(a, r)?;
    let s1 = svd.sigma(1);
    let sr = svd.sigma(r);
    if sr <= rank_cutoff(s1) {
        return Err(Error::DegenerateRank(format!("σ_{r} = {sr:e} is at the rank tolerance")));
    }
    Ok(s1 / sr)
}

/// A learned and a reference orthogonal projector of the same dimension.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    pub learned: DMatrix<f64>,
    pub reference: DMatrix<f64>,
}

/// ‖P̂ − P‖_op. Both projectors are symmetric, so this is the largest
/// absolute eigenvalue of the difference.
pub fn projector_distance(pair: &ProjectorPair) -> Result<f64> {
    let (p, q) = (&pair.learned, &pair.reference);
    if p.shape() != q.shape() || !p.is_square() {
        return Err(Error::InvalidInput(format!(
            "projector shapes {:?} and {:?} differ or are not square",
            p.shape(),
            q.shape()
        )));
    }
    check_finite(p)?;
    check_finite(q)?;
    let diff = p - q;
    let sym = (&diff + diff.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// |σ_i(A) − σ_i(B)| for 1-based `i`.
pub fn weyl_gap(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidInput(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let m = a.nrows().min(a.ncols());
    if i == 0 || i > m {
        return Err(Error::InvalidInput(format!("index {i} outside 1..={m}")));
    }
    let sa = singular_values(a)?;
    let sb = singular_values(b)?;
    Ok((sa[i - 1] - sb[i - 1]).abs())
}

fn fix_signs(svd: &mut TruncatedSvd) {
    for j in 0..svd.k() {
        let col = svd.right.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            svd.right.column_mut(j).neg_mut();
            svd.left.column_mut(j).neg_mut();
        }
    }
}

/// Thin SVD via a QR of the long side, so the dense SVD only ever sees an
/// m×m factor. Returns (σ, U, V) sorted by decreasing σ.
fn dense_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = a.shape();
    let (s, u, v) = if n >= d {
        let qr = a.clone().qr();
        let q = qr.q();
        let svd = qr.r().svd(true, true);
        let u = q * svd.u.expect("u requested");
        let v = svd.v_t.expect("v requested").transpose();
        (svd.singular_values, u, v)
    } else {
        // A = Rᵀ Qᵀ, so an SVD of Rᵀ = W Σ Yᵀ gives A = W Σ (Q Y)ᵀ.
        let qr = a.transpose().qr();
        let q = qr.q();
        let svd = qr.r().transpose().svd(true, true);
        let u = svd.u.expect("u requested");
        let v = q * svd.v_t.expect("v requested").transpose();
        (svd.singular_values, u, v)
    };
    sort_triplets(s.as_slice(), &u, &v)
}

fn sort_triplets(s: &[f64], u: &DMatrix<f64>, v: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let s_sorted = order.iter().map(|&i| s[i].max(0.0)).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    (s_sorted, u_sorted, v_sorted)
}

fn orthonormal_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn subspace_svd(a: &DMatrix<f64>, k: usize) -> Option<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (n, _) = a.shape();
    let m = a.nrows().min(a.ncols());
    let b = (k + OVERSAMPLE).min(m);

    // Fixed starting block so repeated calls are bit-identical.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_5b5);
    let omega = DMatrix::from_fn(n, b, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let mut v = orthonormal_columns(a.tr_mul(&omega));

    for _ in 0..MAX_SUBSPACE_ITERS {
        let w = a * &v;
        let (s, uw, y) = dense_svd(&w);
        let top = s.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return None;
        }
        let vk = &v * &y;
        let uk = uw.columns(0, k).into_owned();
        let atu = a.tr_mul(&uk);
        let mut worst = 0.0_f64;
        for j in 0..k {
            let r = (atu.column(j) - vk.column(j) * s[j]).norm();
            worst = worst.max(r);
        }
        if worst <= SUBSPACE_RESIDUAL_TOL * top {
            return Some((s, uw, vk));
        }
        v = orthonormal_columns(a.tr_mul(&w));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn diagonal_example() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let svd = truncated_svd(&a, 1).unwrap();
        assert!((svd.sigma(1) - 3.0).abs() < 1e-14);
        let p = svd.projector();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((p - want).abs().max() < 1e-14);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let a = DMatrix::zeros(3, 2);
        let svd = truncated_svd(&a, 2).unwrap();
        assert_eq!(svd.numerical_rank(), 0);
        assert!(svd.singular_values.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn rejects_nan() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(truncated_svd(&a, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn wide_and_tall_agree_with_transpose() {
        let a = gaussian(7, 4, 1);
        let s1 = truncated_svd(&a, 4).unwrap();
        let s2 = truncated_svd(&a.transpose(), 4).unwrap();
        assert!((&s1.singular_values - &s2.singular_values).abs().max() < 1e-12);
        assert!((s1.reconstruct() - &a).abs().max() < 1e-12);
    }

    #[test]
    fn sign_convention_holds() {
        let a = gaussian(9, 6, 2);
        let svd = truncated_svd(&a, 3).unwrap();
        for j in 0..3 {
            let c = svd.right.column(j);
            let imax = c.iamax();
            assert!(c[imax] >= 0.0);
        }
    }

    #[test]
    fn iterative_path_matches_dense() {
        // Low rank plus noise, large enough to take the subspace-iteration path.
        let n = 300;
        let d = 400;
        let signal = gaussian(n, 3, 3) * gaussian(3, d, 4) * 5.0;
        let a = signal + gaussian(n, d, 5) * 0.1;
        let fast = truncated_svd(&a, 3).unwrap();
        let (s, u, v) = dense_svd(&a);
        let mut dense = TruncatedSvd {
            singular_values: DVector::from_iterator(3, s.into_iter().take(3)),
            left: u.columns(0, 3).into_owned(),
            right: v.columns(0, 3).into_owned(),
        };
        fix_signs(&mut dense);
        let rel = (&fast.singular_values - &dense.singular_values).abs().max() / dense.sigma(1);
        assert!(rel < 1e-12, "singular values differ by {rel:e}");
        let pd = projector_distance(&ProjectorPair {
            learned: fast.projector(),
            reference: dense.projector(),
        })
        .unwrap();
        assert!(pd < 1e-9, "projectors differ by {pd:e}");
    }

    #[test]
    fn condition_number_errors_on_rank_deficiency() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(condition_number_r(&a, 2), Err(Error::DegenerateRank(_))));
        let b = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 2.0]);
        assert!((condition_number_r(&b, 2).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn weyl_example() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!((weyl_gap(&a, &b, 1).unwrap() - 1.0).abs() < 1e-14);
        assert!(weyl_gap(&a, &b, 3).is_err());
        assert!(weyl_gap(&a, &b, 0).is_err());
    }

    #[test]
    fn projector_distance_shape_mismatch() {
        let pair = ProjectorPair { learned: DMatrix::identity(2, 2), reference: DMatrix::identity(3, 3) };
        assert!(projector_distance(&pair).is_err());
    }
}
