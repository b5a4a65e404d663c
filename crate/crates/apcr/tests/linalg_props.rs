mod common;

use apcr::linalg::{
    condition_number_r, operator_norm, projector_distance, singular_values, truncated_svd, weyl_gap, ProjectorPair,
};
use common::{gaussian, jacobi_singular_values, low_rank, rng};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

#[test]
fn singular_values_match_jacobi_oracle() {
    let mut r = rng(1);
    for (n, d) in [(5, 3), (3, 5), (12, 7), (1, 4), (6, 6)] {
        let a = gaussian(&mut r, n, d);
        let ours = singular_values(&a).unwrap();
        let oracle = jacobi_singular_values(&a);
        for (x, y) in ours.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-10 * oracle[0], "{x} vs {y}");
        }
    }
}

#[test]
fn projector_matches_full_svd_oracle() {
    let mut r = rng(2);
    let a = gaussian(&mut r, 5, 3);
    let p = truncated_svd(&a, 2).unwrap().projector();
    // Top-2 eigenvectors of AᵀA span the same row space.
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut idx: Vec<usize> = (0..3).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let v = DMatrix::from_fn(3, 2, |i, j| eig.eigenvectors[(i, idx[j])]);
    let oracle = &v * v.transpose();
    assert!(operator_norm(&(p - oracle)).unwrap() <= 1e-8);
}

#[test]
fn condition_number_matches_oracle() {
    let mut r = rng(3);
    let a = gaussian(&mut r, 6, 4);
    let s = jacobi_singular_values(&a);
    assert!((condition_number_r(&a, 4).unwrap() - s[0] / s[3]).abs() <= 1e-10 * s[0] / s[3]);
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[4.0, 2.0, 0.0]));
    assert_eq!(condition_number_r(&diag, 2).unwrap(), 2.0);
    assert!(condition_number_r(&diag, 3).is_err());
}

#[test]
fn projector_distance_examples() {
    let p = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, 0.0]));
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.0, 1.0]));
    let pair = ProjectorPair { learned: p.clone(), reference: q };
    assert!((projector_distance(&pair).unwrap() - 1.0).abs() < 1e-12);
    let same = ProjectorPair { learned: p.clone(), reference: p };
    assert!(projector_distance(&same).unwrap() < 1e-12);
}

#[test]
fn weyl_equality_case() {
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[3.0, 1.0]));
    let b = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[2.0, 1.0]));
    assert!((weyl_gap(&a, &b, 1).unwrap() - 1.0).abs() < 1e-12);
    assert!((operator_norm(&(a - b)).unwrap() - 1.0).abs() < 1e-12);
}

fn matrix(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max, 2..=max).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-5.0..5.0f64, n * d).prop_map(move |v| DMatrix::from_vec(n, d, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weyl_holds(a in matrix(7), seed in any::<u64>(), scale in 1e-3..2.0f64) {
        let mut r = rng(seed);
        let e = gaussian(&mut r, a.nrows(), a.ncols()) * scale;
        let b = &a + &e;
        let op = operator_norm(&e).unwrap();
        for i in 1..=a.nrows().min(a.ncols()) {
            prop_assert!(weyl_gap(&a, &b, i).unwrap() <= op * (1.0 + 1e-12));
        }
    }

    #[test]
    fn wedin_holds(seed in any::<u64>(), k in 1usize..4, scale in 1e-4..0.5f64) {
        let mut r = rng(seed);
        let a = low_rank(&mut r, 10, 8, k, 0.0);
        let e = gaussian(&mut r, 10, 8) * scale;
        let s = singular_values(&a).unwrap();
        let gap = s[k - 1] - s[k];
        prop_assume!(gap > 0.0);
        let pair = ProjectorPair {
            learned: truncated_svd(&(&a + &e), k).unwrap().projector(),
            reference: truncated_svd(&a, k).unwrap().projector(),
        };
        let dist = projector_distance(&pair).unwrap();
        prop_assert!(dist <= 2.0 * operator_norm(&e).unwrap() / gap);
        prop_assert!(dist <= 1.0 + 1e-12);
    }

    #[test]
    fn projector_distance_is_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = truncated_svd(&gaussian(&mut r, 6, 5), 2).unwrap().projector();
        let q = truncated_svd(&gaussian(&mut r, 6, 5), 2).unwrap().projector();
        let a = projector_distance(&ProjectorPair { learned: p.clone(), reference: q.clone() }).unwrap();
        let b = projector_distance(&ProjectorPair { learned: q, reference: p }).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn truncation_reconstructs(a in matrix(9), k in 1usize..4) {
        let k = k.min(a.nrows().min(a.ncols()));
        let t = truncated_svd(&a, k).unwrap();
        let full = a.clone().svd(true, true);
        let mut idx: Vec<usize> = (0..full.singular_values.len()).collect();
        idx.sort_by(|&i, &j| full.singular_values[j].total_cmp(&full.singular_values[i]));
        let u = full.u.unwrap();
        let vt = full.v_t.unwrap();
        let mut ak = DMatrix::zeros(a.nrows(), a.ncols());
        for &i in idx.iter().take(k) {
            ak += u.column(i) * vt.row(i) * full.singular_values[i];
        }
        let s1 = full.singular_values.max();
        prop_assert!(operator_norm(&(t.reconstruct() - ak)).unwrap() <= 1e-8 * s1.max(1.0));
    }
}
