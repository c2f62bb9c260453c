//! Independent ground truth and competitor estimators.

pub mod lasserre;
pub mod lp;
pub mod projection;
pub mod sampling;

pub use lasserre::lasserre_slice_volume;
pub use sampling::{mc_polytope, mc_polytope_basis, sample_uniform_simplex, PolytopeSample};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measurement::MeasurementSystem;

/// Non-negative ℓ1 recovery: `min 1ᵀx  s.t.  A x = y, x ≥ 0`.
pub fn l1_baseline(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    Ok(l1_solve(a, y)?.x)
}

/// [`l1_baseline`] with the full LP result (objective, basis, tie indicator).
pub fn l1_solve(a: &Matrix, y: &[f64]) -> Result<lp::LpSolution> {
    lp::solve_standard_form(a, y, &vec![1.0; a.cols()])
}

/// Simplex-constrained ℓ2 recovery: the minimum-norm point of `Δ ∩ {A x = y}`.
pub fn l2_baseline(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let sys = MeasurementSystem::decompose(a)?;
    let t = sys.equivalent_measurement(y)?;
    l2_baseline_canonical(sys.v_s(), &t)
}

/// [`l2_baseline`] on the reduced form `V_sᵀx = t`. Dykstra converges only linearly
/// when the solution sits on a low-dimensional face; if it stalls, the finite
/// active-set solver [`projection::min_norm_point`] takes over.
pub fn l2_baseline_canonical(v_s: &Matrix, t: &[f64]) -> Result<Vec<f64>> {
    let (x, converged) = projection::dykstra_iterate(v_s, t, &vec![0.0; v_s.rows()]);
    if converged {
        return Ok(x);
    }
    if let Some(p) = projection::min_norm_point(v_s, t) {
        return Ok(p);
    }
    let residual = v_s.tr_matvec(&x).iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if residual <= 1e-8 {
        Ok(x)
    } else {
        Err(Error::ConvergenceFailure {
            residual,
            iterations: projection::DYKSTRA_MAX_ITERS,
        })
    }
}

/// Empirical mean squared error `(1/n) Σ ‖x_i − x̂_i‖²`.
pub fn emse(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(Error::ShapeError(format!(
            "{} true vectors vs {} estimates",
            truth.len(),
            est.len()
        )));
    }
    let mut acc = 0.0;
    for (x, xh) in truth.iter().zip(est) {
        if x.len() != xh.len() {
            return Err(Error::ShapeError("vector lengths differ".into()));
        }
        acc += x.iter().zip(xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(acc / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emse_examples() {
        let x = vec![vec![0.1, 0.2], vec![0.3, 0.3]];
        assert_eq!(emse(&x, &x).unwrap(), 0.0);
        let e = emse(&[vec![0.1, 0.0]], &[vec![0.0, 0.0]]).unwrap();
        assert!((e - 0.01).abs() < 1e-15);
        let a = vec![vec![0.0], vec![0.0]];
        let b = vec![vec![0.1], vec![0.03f64.sqrt()]];
        assert!((emse(&a, &b).unwrap() - 0.02).abs() < 1e-15);
        assert!(emse(&a, &b[..1]).is_err());
    }

    #[test]
    fn baselines_single_constraint() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let x = l1_baseline(&a, &[0.2]).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-12 && x[1] == 0.0 && x[2] == 0.0);
        let x = l2_baseline(&a, &[0.2]).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-9 && x[1].abs() < 1e-9);
    }

    #[test]
    fn l1_recovers_vertex() {
        let a = Matrix::from_rows(&[vec![0.3, -1.2, 0.7, 2.0], vec![1.1, 0.4, -0.5, 0.2]]).unwrap();
        let y = a.matvec(&[0.0, 0.0, 1.0, 0.0]);
        let x = l1_baseline(&a, &y).unwrap();
        assert!(x[0] < 1e-12 && x[1] < 1e-12 && (x[2] - 1.0).abs() < 1e-12 && x[3] < 1e-12);
    }
}
