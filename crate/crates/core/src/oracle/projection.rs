//! Euclidean projections onto the simplex and onto slices of it.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measurement::kernel_basis;

const DYKSTRA_STEP_TOL: f64 = 1e-10;
pub(crate) const DYKSTRA_MAX_ITERS: usize = 100_000;

/// Projection onto `{x ≥ 0, Σx = 1}` by sorting.
pub fn project_probability_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let th = (cum - 1.0) / (j + 1) as f64;
        if uj - th > 0.0 {
            theta = th;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projection onto the solid simplex `{x ≥ 0, Σx ≤ 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        clipped
    } else {
        project_probability_simplex(v)
    }
}

/// Projection onto `{x : V_sᵀx = t}` for orthonormal `V_s`.
pub fn project_affine(v_s: &Matrix, t: &[f64], x: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = v_s.tr_matvec(x).iter().zip(t).map(|(a, b)| a - b).collect();
    let corr = v_s.matvec(&r);
    x.iter().zip(&corr).map(|(a, b)| a - b).collect()
}

/// Dykstra's alternating projections: the point of `Δ ∩ {V_sᵀx = t}` closest to `x0`.
/// The returned point lies in `Δ` exactly; the affine residual is what convergence left.
pub fn dykstra(v_s: &Matrix, t: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let (x, _) = dykstra_iterate(v_s, t, x0);
    let residual = affine_residual(v_s, t, &x);
    if residual <= 1e-8 {
        Ok(x)
    } else {
        Err(Error::ConvergenceFailure {
            residual,
            iterations: DYKSTRA_MAX_ITERS,
        })
    }
}

fn affine_residual(v_s: &Matrix, t: &[f64], x: &[f64]) -> f64 {
    v_s.tr_matvec(x)
        .iter()
        .zip(t)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Last iterate and whether the step criterion was met.
pub fn dykstra_iterate(v_s: &Matrix, t: &[f64], x0: &[f64]) -> (Vec<f64>, bool) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for it in 0..DYKSTRA_MAX_ITERS {
        let xp: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let y = project_affine(v_s, t, &xp);
        for i in 0..n {
            p[i] = xp[i] - y[i];
        }
        let yq: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
        let xn = project_simplex(&yq);
        for i in 0..n {
            q[i] = yq[i] - xn[i];
        }
        let step = xn
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let gap = xn.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = xn;
        if it > 0 && step < DYKSTRA_STEP_TOL && gap < 1e-8 {
            return (x, true);
        }
    }
    (x, false)
}

/// Minimum-norm point of `Δ ∩ {V_sᵀx = t}` by a finite active-set method.
///
/// With `x = V_s t + V_0 w` the objective is `‖t‖² + ‖w‖²`, so the problem is a
/// least-distance program `min ‖w‖  s.t.  G w ≥ h` with one row per simplex facet.
/// That is solved through its NNLS dual (Lawson and Hanson).
pub fn min_norm_point(v_s: &Matrix, t: &[f64]) -> Option<Vec<f64>> {
    let n = v_s.rows();
    let x_c = v_s.matvec(t);
    let v_0 = kernel_basis(v_s);
    let d = v_0.cols();
    if d == 0 {
        return crate::measurement::in_simplex(&x_c, 1e-12).then_some(x_c);
    }
    // constraints `g·w ≥ h`, stored as columns (g, h): V_0 w ≥ −x_c and −1ᵀV_0 w ≥ 1ᵀx_c − 1
    let mut e_cols: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for i in 0..n {
        let mut c: Vec<f64> = (0..d).map(|j| v_0[(i, j)]).collect();
        c.push(-x_c[i]);
        e_cols.push(c);
    }
    let mut c: Vec<f64> = (0..d).map(|j| -(0..n).map(|i| v_0[(i, j)]).sum::<f64>()).collect();
    c.push(x_c.iter().sum::<f64>() - 1.0);
    e_cols.push(c);
    let mut f = vec![0.0; d + 1];
    f[d] = 1.0;
    let u = nnls(&e_cols, &f)?;
    let mut r = f.iter().map(|v| -v).collect::<Vec<f64>>();
    for (col, &uj) in e_cols.iter().zip(&u) {
        for (ri, ci) in r.iter_mut().zip(col) {
            *ri += uj * ci;
        }
    }
    if r[d].abs() < 1e-14 {
        return None;
    }
    let w: Vec<f64> = r[..d].iter().map(|v| -v / r[d]).collect();
    let x: Vec<f64> = (0..n)
        .map(|i| (x_c[i] + (0..d).map(|j| v_0[(i, j)] * w[j]).sum::<f64>()).max(0.0))
        .collect();
    (x.iter().sum::<f64>() <= 1.0 + 1e-9).then_some(x)
}

/// Lawson–Hanson non-negative least squares `min ‖E u − f‖, u ≥ 0`; `E` is given by columns.
fn nnls(cols: &[Vec<f64>], f: &[f64]) -> Option<Vec<f64>> {
    let p = cols.len();
    let scale = cols.iter().flatten().chain(f).fold(1.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-13 * scale * scale * p as f64;
    let mut u = vec![0.0; p];
    let mut passive = vec![false; p];
    for _ in 0..3 * p + 10 {
        let resid: Vec<f64> = (0..f.len())
            .map(|r| f[r] - (0..p).map(|j| cols[j][r] * u[j]).sum::<f64>())
            .collect();
        let grad: Vec<f64> = cols.iter().map(|c| c.iter().zip(&resid).map(|(a, b)| a * b).sum()).collect();
        let Some(enter) = (0..p)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]))
        else {
            return Some(u);
        };
        passive[enter] = true;
        loop {
            let set: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let z_set = least_squares(&set.iter().map(|&j| cols[j].as_slice()).collect::<Vec<_>>(), f)?;
            let mut z = vec![0.0; p];
            for (&j, &v) in set.iter().zip(&z_set) {
                z[j] = v;
            }
            if set.iter().all(|&j| z[j] > 0.0) {
                u = z;
                break;
            }
            let alpha = set
                .iter()
                .filter(|&&j| z[j] <= 0.0)
                .map(|&j| u[j] / (u[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            for j in 0..p {
                u[j] += alpha * (z[j] - u[j]);
                if passive[j] && u[j] <= 1e-15 * scale {
                    passive[j] = false;
                    u[j] = 0.0;
                }
            }
        }
    }
    None
}

/// Least squares on the given columns by Householder QR; `None` if they are dependent.
fn least_squares(cols: &[&[f64]], f: &[f64]) -> Option<Vec<f64>> {
    let (rows, k) = (f.len(), cols.len());
    if k > rows {
        return None;
    }
    let mut a: Vec<Vec<f64>> = cols.iter().map(|c| c.to_vec()).collect();
    let mut b = f.to_vec();
    let norm0 = a.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    for j in 0..k {
        let alpha = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha <= 1e-13 * norm0 {
            return None;
        }
        let alpha = if a[j][j] > 0.0 { -alpha } else { alpha };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for c in a.iter_mut().skip(j) {
            let dotp: f64 = v.iter().zip(&c[j..]).map(|(p, q)| p * q).sum();
            for (ci, vi) in c[j..].iter_mut().zip(&v) {
                *ci -= 2.0 * dotp / vv * vi;
            }
        }
        let dotp: f64 = v.iter().zip(&b[j..]).map(|(p, q)| p * q).sum();
        for (bi, vi) in b[j..].iter_mut().zip(&v) {
            *bi -= 2.0 * dotp / vv * vi;
        }
    }
    let mut x = vec![0.0; k];
    for j in (0..k).rev() {
        let s: f64 = (j + 1..k).map(|c| a[c][j] * x[c]).sum();
        x[j] = (b[j] - s) / a[j][j];
    }
    Some(x)
}
