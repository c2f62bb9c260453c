//! Competitor estimators and Monte Carlo oracles against brute-force references.

mod support;

use centroid_core::ilt::{evaluate_all, evaluate_volume};
use centroid_core::instances::{gaussian_matrix, random_feasible_t, random_nonneg_orthonormal, random_unit_nonneg};
use centroid_core::oracle::{l1_solve, l2_baseline, lasserre_slice_volume, mc_polytope, projection, sample_uniform_simplex};
use centroid_core::rng::seeded;
use centroid_core::{Matrix, MeasurementSystem};
use rand::Rng as _;
use support::{l1_vertex_enumeration, min_norm_active_set};

#[test]
fn l1_matches_vertex_enumeration() {
    let mut rng = seeded(301);
    for _ in 0..40 {
        let n = rng.random_range(3..=6);
        let m = rng.random_range(1..n);
        let a = gaussian_matrix(m, n, &mut rng);
        let x = sample_uniform_simplex(n, &mut rng);
        let y = a.matvec(&x);
        let sol = l1_solve(&a, &y).unwrap();
        let best = l1_vertex_enumeration(&a.to_rows(), &y).unwrap();
        assert!((sol.objective - best).abs() <= 1e-9 * best.max(1.0), "{} vs {best}", sol.objective);
        assert!(sol.x.iter().filter(|v| **v > 1e-12).count() <= m);
    }
}

#[test]
fn l2_matches_active_set_oracle() {
    let mut rng = seeded(302);
    for _ in 0..40 {
        let n = rng.random_range(3..=6);
        let m = rng.random_range(1..n);
        let a = gaussian_matrix(m, n, &mut rng);
        let x = sample_uniform_simplex(n, &mut rng);
        let y = a.matvec(&x);
        let got = l2_baseline(&a, &y).unwrap();
        let want = min_norm_active_set(&a.to_rows(), &y).unwrap();
        let gap = got.iter().zip(&want).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-6, "{got:?} vs {want:?}");
        let r = a.matvec(&got);
        assert!(r.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-8));
    }
}

/// Near-vertex truths, where Dykstra crawls and the active-set fallback does the work.
#[test]
fn l2_near_vertices_matches_active_set_oracle() {
    let mut rng = seeded(305);
    for _ in 0..60 {
        let n = rng.random_range(4..=6);
        let m = rng.random_range(2..n);
        let a = gaussian_matrix(m, n, &mut rng);
        let mut x: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-12.0..-4.0))).collect();
        let top = rng.random_range(0..n);
        x[top] = 0.0;
        x[top] = 1.0 - x.iter().sum::<f64>() - 1e-9;
        let y = a.matvec(&x);
        let want = min_norm_active_set(&a.to_rows(), &y).unwrap();
        let sys = MeasurementSystem::decompose(&a).unwrap();
        let t = sys.equivalent_measurement(&y).unwrap();
        for got in [l2_baseline(&a, &y).unwrap(), projection::min_norm_point(sys.v_s(), &t).unwrap()] {
            let gap = got.iter().zip(&want).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-6, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn simplex_projection_is_idempotent_kkt() {
    let mut rng = seeded(303);
    for _ in 0..100 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.5)).collect();
        let x = projection::project_simplex(&v);
        assert!(x.iter().all(|q| *q >= 0.0) && x.iter().sum::<f64>() <= 1.0 + 1e-12);
        let again = projection::project_simplex(&x);
        assert!(again.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-15));
        // optimality: ⟨v − x, z − x⟩ ≤ 0 for the vertices z of the solid simplex
        for k in 0..=6 {
            let z: Vec<f64> = (0..6).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
            let ip: f64 = (0..6).map(|i| (v[i] - x[i]) * (z[i] - x[i])).sum();
            assert!(ip <= 1e-12, "{ip}");
        }
    }
}

#[test]
fn lasserre_agrees_with_engine() {
    let mut rng = seeded(304);
    for _ in 0..30 {
        let n = rng.random_range(3..=8);
        let a = random_unit_nonneg(n, &mut rng);
        let sys = MeasurementSystem::from_orthonormal_basis(&Matrix::from_columns(&[a.clone()]).unwrap()).unwrap();
        let t = centroid_core::linalg::dot(&a, &sample_uniform_simplex(n, &mut rng));
        let e = evaluate_volume(&sys, &[t]).unwrap();
        let l = lasserre_slice_volume(&a, t).unwrap();
        assert!((e - l).abs() <= 1e-9 * l.abs().max(1e-300), "{e} vs {l} a={a:?} t={t}");
    }
}

#[test]
fn mc_volume_is_unbiased() {
    let mut rng = seeded(305);
    let v = random_nonneg_orthonormal(4, 2, &mut rng);
    let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
    let (t, _) = random_feasible_t(&v, &mut rng);
    let vol = evaluate_volume(&sys, &t).unwrap();
    let inside = (0..50)
        .filter(|&seed| {
            let s = mc_polytope(&sys, &t, 20_000, seed).unwrap();
            (s.volume_est - vol).abs() <= 3.0 * s.volume_stderr
        })
        .count();
    assert!(inside >= 47, "{inside}/50");
}

#[test]
fn worked_example_inside_mc_band() {
    let a = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.5, 0.866, 0.0]]).unwrap();
    let sys = MeasurementSystem::decompose(&a).unwrap();
    let t = [0.5, 0.0933];
    let s = mc_polytope(&sys, &t, 1_000_000, 7).unwrap();
    let ev = evaluate_all(&sys, &t).unwrap();
    assert!(
        (ev.volume.to_f64() - s.volume_est).abs() <= 3.0 * s.volume_stderr + 1e-12,
        "{} vs {} ± {}",
        ev.volume.to_f64(),
        s.volume_est,
        s.volume_stderr
    );
    assert!((0.2155 - s.volume_est).abs() <= 3.0 * s.volume_stderr + 1e-4);
}
