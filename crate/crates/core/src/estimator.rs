//! Conditional-mean (centroid) estimate `x̂ = μ / vol(P_t)` with numeric-health policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilt::{evaluate_projections_on, image_box, Evaluation, Sides};
use crate::linalg::Matrix;
use crate::measurement::{BasisClass, MeasurementSystem};
use crate::network::NetworkSpec;
use crate::oracle::lp::optimize_over_slice;
use crate::oracle::projection::{dykstra, project_simplex};

/// Volumes below this are treated as underflow.
pub const VOLUME_FLOOR: f64 = 1e-300;
/// Constraint residual above which the estimate is projected back onto `P_t`.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Largest accepted bound on the rounding error of `μ / vol`, per coordinate.
pub const PRECISION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum Backend<'a> {
    Engine,
    /// A network compiled from the same measurement system.
    Network(&'a NetworkSpec),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthFlags {
    /// The volume underflowed, vanished, or could not be resolved at working precision
    /// on any closing side; `x_hat` is the ℓ1 fallback.
    pub underflow: bool,
    /// `μ / vol` violated a constraint by more than `1e−9` and was projected onto `P_t`.
    pub clamped: bool,
    /// The basis was perturbed to break a degenerate configuration.
    pub perturbed: bool,
    /// `V_s` has negative entries, a regime validated only against Monte Carlo.
    pub empirical_basis: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    /// `vol(P_t)` as a double (0 when it underflows).
    pub volume: f64,
    /// Natural log of the volume; meaningful even when `volume` underflows.
    pub log_volume: f64,
    pub mu: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub flags: HealthFlags,
}

fn residual(v_s: &Matrix, t: &[f64], x: &[f64]) -> f64 {
    let r = v_s
        .tr_matvec(x)
        .iter()
        .zip(t)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let below = x.iter().map(|v| -v).fold(0.0, f64::max);
    let over = (x.iter().sum::<f64>() - 1.0).max(0.0);
    r.max(below).max(over)
}

fn evaluate(sys: &MeasurementSystem, t: &[f64], backend: Backend, sides: Sides) -> Result<Evaluation> {
    match backend {
        Backend::Engine => evaluate_projections_on(&sys.vertex_projections(), t, sides),
        Backend::Network(net) => {
            if net.n != sys.n() || net.m != sys.m() {
                return Err(Error::ShapeError(format!(
                    "network is {}×{}, system is {}×{}",
                    net.n,
                    net.m,
                    sys.n(),
                    sys.m()
                )));
            }
            Ok(net.forward_on(t, sides)?.evaluation)
        }
    }
}

/// Close each layer on the side of `t` nearer the top of that coordinate's range.
fn preferred_sides(sys: &MeasurementSystem, t: &[f64]) -> Sides {
    let bx = image_box(&sys.vertex_projections());
    Sides(
        bx.iter()
            .zip(t)
            .enumerate()
            .filter(|(_, ([lo, hi], x))| **x > 0.5 * (lo + hi))
            .fold(0, |m, (j, _)| m | 1 << j),
    )
}

/// The default right-closed evaluation, and if its rounding bound is too loose the
/// remaining side patterns in turn, keeping the tightest.
fn evaluate_resolved(sys: &MeasurementSystem, t: &[f64], backend: Backend) -> Result<Evaluation> {
    let mut best = evaluate(sys, t, backend, Sides::RIGHT)?;
    if best.volume.is_zero() || best.centroid_error_bound() <= PRECISION_TOL {
        return Ok(best);
    }
    let first = preferred_sides(sys, t);
    let rest = (1..1u32 << sys.m()).filter(|&m| m != first.0).map(Sides);
    for sides in std::iter::once(first).chain(rest) {
        if sides == Sides::RIGHT {
            continue;
        }
        let ev = evaluate(sys, t, backend, sides)?;
        if ev.centroid_error_bound() < best.centroid_error_bound() {
            best = ev;
            if best.centroid_error_bound() <= PRECISION_TOL {
                break;
            }
        }
    }
    Ok(best)
}

pub fn centroid_estimate(sys: &MeasurementSystem, t: &[f64], backend: Backend) -> Result<EstimationResult> {
    if t.len() != sys.m() {
        return Err(Error::ShapeError(format!("t has {} entries, expected {}", t.len(), sys.m())));
    }
    let ev = evaluate_resolved(sys, t, backend)?;
    let mut flags = HealthFlags {
        perturbed: sys.perturbation().is_some(),
        empirical_basis: sys.basis_class() == BasisClass::Orthonormal,
        ..HealthFlags::default()
    };
    let log_volume = ev.volume.ln_abs();
    let healthy = ev.volume.signum() > 0
        && log_volume >= VOLUME_FLOOR.ln()
        && ev.centroid_error_bound() <= PRECISION_TOL;
    let mu: Vec<f64> = ev.moments.iter().map(|m| m.to_f64().max(0.0)).collect();

    if !healthy {
        let ones = vec![1.0; sys.n()];
        let x_hat = match optimize_over_slice(sys.v_s(), t, &ones, true) {
            Ok(sol) => sol.x,
            Err(Error::Infeasible) => return Err(Error::EmptyPolytope),
            Err(e) => return Err(e),
        };
        flags.underflow = true;
        return Ok(EstimationResult {
            volume: ev.volume.to_f64().max(0.0),
            log_volume: if ev.volume.signum() > 0 { log_volume } else { f64::NEG_INFINITY },
            mu,
            x_hat,
            flags,
        });
    }

    let mut x_hat: Vec<f64> = ev.moments.iter().map(|m| (*m / ev.volume).to_f64()).collect();
    if residual(sys.v_s(), t, &x_hat) > FEASIBILITY_TOL {
        flags.clamped = true;
        x_hat = dykstra(sys.v_s(), t, &x_hat).unwrap_or_else(|_| project_simplex(&x_hat));
    }
    Ok(EstimationResult {
        volume: ev.volume.to_f64(),
        log_volume,
        mu,
        x_hat,
        flags,
    })
}

/// Decompose `A`, reduce `y` to `t`, and estimate with the engine.
pub fn estimate_from_y(a: &Matrix, y: &[f64]) -> Result<EstimationResult> {
    let sys = MeasurementSystem::decompose(a)?;
    let t = sys.equivalent_measurement(y)?;
    centroid_estimate(&sys, &t, Backend::Engine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::compile;

    fn worked() -> MeasurementSystem {
        let a = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.5, 0.866, 0.0]]).unwrap();
        MeasurementSystem::decompose(&a).unwrap()
    }

    #[test]
    fn right_triangle_centroid() {
        let v = Matrix::from_columns(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let r = centroid_estimate(&sys, &[0.5], Backend::Engine).unwrap();
        let want = [1.0 / 6.0, 1.0 / 6.0, 0.5];
        for i in 0..3 {
            assert!((r.x_hat[i] - want[i]).abs() < 1e-12, "{:?}", r.x_hat);
        }
        assert!(!r.flags.underflow && !r.flags.clamped);
    }

    #[test]
    fn worked_example_feasible() {
        let sys = worked();
        let t = [0.5, 0.0933];
        let net = compile(&sys).unwrap();
        for backend in [Backend::Engine, Backend::Network(&net)] {
            let r = centroid_estimate(&sys, &t, backend).unwrap();
            assert!((r.volume - 0.2155).abs() < 1e-4);
            let back = sys.v_s().tr_matvec(&r.x_hat);
            assert!((back[0] - t[0]).abs() < 1e-6 && (back[1] - t[1]).abs() < 1e-6);
            assert!(r.x_hat.iter().all(|x| *x >= -1e-9) && r.x_hat.iter().sum::<f64>() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn vertex_measurement_falls_back() {
        let a = Matrix::from_rows(&[vec![0.3, -1.2, 0.7, 2.0], vec![1.1, 0.4, -0.5, 0.2]]).unwrap();
        let y = a.matvec(&[0.0, 1.0, 0.0, 0.0]);
        let r = estimate_from_y(&a, &y).unwrap();
        assert!(r.flags.underflow);
        let back = a.matvec(&r.x_hat);
        assert!((back[0] - y[0]).abs() < 1e-6 && (back[1] - y[1]).abs() < 1e-6);
    }

    #[test]
    fn far_outside_is_empty() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(estimate_from_y(&a, &[5.0, 5.0]), Err(Error::EmptyPolytope));
    }

    #[test]
    fn from_y_reproduces_measurement() {
        let a = Matrix::from_rows(&[vec![0.3, -1.2, 0.7, 2.0, 0.1], vec![1.1, 0.4, -0.5, 0.2, 0.9]]).unwrap();
        let x = [0.1, 0.2, 0.05, 0.3, 0.15];
        let y = a.matvec(&x);
        let r = estimate_from_y(&a, &y).unwrap();
        assert!(!r.flags.underflow);
        assert!(r.flags.empirical_basis);
        let back = a.matvec(&r.x_hat);
        assert!((back[0] - y[0]).abs() < 1e-6 && (back[1] - y[1]).abs() < 1e-6);
    }
}
