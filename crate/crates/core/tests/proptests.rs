//! Randomised invariants.

use centroid_core::ilt::{evaluate_all, evaluate_volume};
use centroid_core::instances::{gaussian_matrix, random_nonneg_orthonormal};
use centroid_core::oracle::{emse, projection, sample_uniform_simplex};
use centroid_core::rng::seeded;
use centroid_core::{Matrix, MeasurementSystem};
use proptest::prelude::*;

fn permute_rows(v: &Matrix, perm: &[usize]) -> Matrix {
    let rows = v.to_rows();
    Matrix::from_rows(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decompose_round_trip(seed in any::<u64>(), n in 2usize..=9, m_raw in 1usize..=5) {
        let m = m_raw.min(n - 1);
        let mut rng = seeded(seed);
        let a = gaussian_matrix(m, n, &mut rng);
        let sys = MeasurementSystem::decompose(&a).unwrap();
        for _ in 0..4 {
            let x = sample_uniform_simplex(n, &mut rng);
            let t = sys.equivalent_measurement(&a.matvec(&x)).unwrap();
            let direct = sys.v_s().tr_matvec(&x);
            for (p, q) in t.iter().zip(&direct) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coordinate_permutation_permutes_moments(seed in any::<u64>(), n in 3usize..=6, m in 1usize..=2) {
        let mut rng = seeded(seed);
        let v = random_nonneg_orthonormal(n, m, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        perm.swap(0, n - 1);
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let sys_p = MeasurementSystem::from_orthonormal_basis(&permute_rows(&v, &perm)).unwrap();
        let x = sample_uniform_simplex(n, &mut rng);
        let t = v.tr_matvec(&x);
        let e = evaluate_all(&sys, &t).unwrap();
        let ep = evaluate_all(&sys_p, &t).unwrap();
        let vol = e.volume.to_f64();
        prop_assert!((vol - ep.volume.to_f64()).abs() <= 1e-10 * vol);
        for (k, &src) in perm.iter().enumerate() {
            let a = ep.moments[k].to_f64();
            let b = e.moments[src].to_f64();
            prop_assert!((a - b).abs() <= 1e-9 * vol, "{} vs {}", a, b);
        }
    }

    #[test]
    fn volume_nonnegative_and_moments_bounded(seed in any::<u64>(), n in 3usize..=6, m in 1usize..=3) {
        let m = m.min(n - 1);
        let mut rng = seeded(seed);
        let v = random_nonneg_orthonormal(n, m, &mut rng);
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let x = sample_uniform_simplex(n, &mut rng);
        let t = v.tr_matvec(&x);
        let vol = evaluate_volume(&sys, &t).unwrap();
        prop_assert!(vol >= 0.0);
        let e = evaluate_all(&sys, &t).unwrap();
        let total: f64 = e.moments.iter().map(|w| w.to_f64()).sum();
        // Σ_k μ_k = ∫ Σx over P_t ∈ [0, vol]
        prop_assert!(total >= -1e-9 * vol && total <= vol * (1.0 + 1e-9));
    }

    #[test]
    fn solid_simplex_projection_kkt(v in prop::collection::vec(-2.0f64..2.0, 1..8)) {
        let x = projection::project_simplex(&v);
        prop_assert!(x.iter().all(|q| *q >= 0.0));
        prop_assert!(x.iter().sum::<f64>() <= 1.0 + 1e-12);
        let again = projection::project_simplex(&x);
        for (p, q) in again.iter().zip(&x) {
            prop_assert!((p - q).abs() < 1e-14);
        }
        // the shift v − x is uniform on the support
        let shifts: Vec<f64> = v.iter().zip(&x).filter(|(_, q)| **q > 0.0).map(|(p, q)| p - q).collect();
        for w in shifts.windows(2) {
            prop_assert!((w[0] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn emse_is_mean_of_squared_errors(errs in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let truth: Vec<Vec<f64>> = errs.iter().map(|_| vec![0.0, 0.0]).collect();
        let est: Vec<Vec<f64>> = errs.iter().map(|e| vec![e.sqrt(), 0.0]).collect();
        let want = errs.iter().sum::<f64>() / errs.len() as f64;
        prop_assert!((emse(&truth, &est).unwrap() - want).abs() < 1e-12);
    }
}
