//! Random problem instances shared by tests, acceptance runs and the benchmark.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{orthonormalize_against, Matrix};
use crate::oracle::sample_uniform_simplex;
use crate::rng::Rng;

/// `rows × cols` matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Orthonormal `N×M` basis with nonnegative entries. Columns of such a basis
/// necessarily have disjoint supports; every coordinate is assigned to some column.
pub fn random_nonneg_orthonormal(n: usize, m: usize, rng: &mut Rng) -> Matrix {
    assert!(m >= 1 && m <= n, "need 1 ≤ M ≤ N");
    let mut owner: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.random_range(0..m) }).collect();
    owner.shuffle(rng);
    let mut v = Matrix::zeros(n, m);
    for j in 0..m {
        let entries: Vec<(usize, f64)> = (0..n)
            .filter(|&i| owner[i] == j)
            .map(|i| (i, rng.random_range(0.1..1.0)))
            .collect();
        let norm = entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        for (i, x) in entries {
            v[(i, j)] = x / norm;
        }
    }
    v
}

/// Haar-like orthonormal `N×M` basis (Gram-Schmidt on Gaussian columns), redrawn
/// until it has at least one clearly negative entry.
pub fn random_sign_mixed_orthonormal(n: usize, m: usize, rng: &mut Rng) -> Matrix {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
        while cols.len() < m {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            if orthonormalize_against(&mut v, &cols).is_some_and(|r| r > 1e-3) {
                cols.push(v);
            }
        }
        let v = Matrix::from_columns(&cols).expect("equal-length columns");
        if v.min_entry() < -1e-3 {
            return v;
        }
    }
}

/// Unit vector with nonnegative entries, at least one of them positive.
pub fn random_unit_nonneg(n: usize, rng: &mut Rng) -> Vec<f64> {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter().map(|x| x / norm).collect()
}

/// `t = V_sᵀ x` for a uniform `x ∈ Δ`, together with `x`.
pub fn random_feasible_t(v_s: &Matrix, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let x = sample_uniform_simplex(v_s.rows(), rng);
    (v_s.tr_matvec(&x), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{classify_basis, BasisClass};
    use crate::rng::seeded;

    fn gram_error(v: &Matrix) -> f64 {
        v.transpose().matmul(v).sub(&Matrix::identity(v.cols())).max_abs()
    }

    #[test]
    fn nonneg_bases_are_orthonormal() {
        let mut rng = seeded(5);
        for n in 2..8 {
            for m in 1..=n {
                let v = random_nonneg_orthonormal(n, m, &mut rng);
                assert!(gram_error(&v) < 1e-14);
                assert_eq!(classify_basis(&v), BasisClass::NonnegOrthonormal);
            }
        }
    }

    #[test]
    fn mixed_bases_are_orthonormal() {
        let mut rng = seeded(6);
        let v = random_sign_mixed_orthonormal(6, 3, &mut rng);
        assert!(gram_error(&v) < 1e-13);
        assert_eq!(classify_basis(&v), BasisClass::Orthonormal);
    }

    #[test]
    fn unit_direction() {
        let a = random_unit_nonneg(5, &mut seeded(1));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(a.iter().all(|x| *x >= 0.0));
    }
}
