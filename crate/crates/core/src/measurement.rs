//! Measurement model `y = A x` and its reduction to the canonical form `t = V_sᵀ x`.
//!
//! `A = U_s Σ_s V_sᵀ` is computed with a one-sided Jacobi SVD of `Aᵀ`; `V_0`
//! completes `V_s` to an orthonormal basis of `R^N` and parametrises the kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, orthonormalize_against, Matrix};

/// Off-diagonal mass below which a Jacobi rotation is skipped.
const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;
/// Rank threshold relative to the largest singular value.
const RANK_TOL: f64 = 1e-10;
/// Entries of `V_s` above this still count as nonnegative.
pub const NONNEG_TOL: f64 = -1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisClass {
    /// Every entry of `V_s` is nonnegative (the regime the recursion is proven for).
    NonnegOrthonormal,
    /// Mixed signs; results are validated empirically against the Monte Carlo oracle.
    Orthonormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSystem {
    a: Matrix,
    u_s: Matrix,
    sigma_s: Vec<f64>,
    v_s: Matrix,
    v_0: Matrix,
    basis_class: BasisClass,
    perturbation: Option<Perturbation>,
}

/// Vertices `e_1, …, e_N, 0` of the standard simplex, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVertexSet {
    dim: usize,
}

impl SimplexVertexSet {
    pub fn new(dim: usize) -> Self {
        SimplexVertexSet { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dim + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Vertex `i` (0-based); index `dim` is the origin.
    pub fn vertex(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if i < self.dim {
            v[i] = 1.0;
        }
        v
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.vertex(i)).collect()
    }
}

impl MeasurementSystem {
    /// SVD-based reduction of a full-row-rank `M×N` matrix with `M < N`.
    pub fn decompose(a: &Matrix) -> Result<MeasurementSystem> {
        let (m, n) = (a.rows(), a.cols());
        if m == 0 || m >= n {
            return Err(Error::ShapeError(format!(
                "need 0 < M < N, got a {m}x{n} measurement matrix"
            )));
        }
        if a.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::ShapeError("non-finite matrix entry".into()));
        }

        // One-sided Jacobi on the columns of W = Aᵀ: W U = V Σ.
        let mut w: Vec<Vec<f64>> = (0..m).map(|i| a.row(i).to_vec()).collect();
        let mut u: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..m).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..m {
                for q in p + 1..m {
                    let alpha = dot(&w[p], &w[p]);
                    let beta = dot(&w[q], &w[q]);
                    let gamma = dot(&w[p], &w[q]);
                    if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    rotate(&mut w, p, q, c, s);
                    rotate(&mut u, p, q, c, s);
                }
            }
            if !rotated {
                break;
            }
        }

        let sigma: Vec<f64> = w.iter().map(|col| norm2(col)).collect();
        let smax = sigma.iter().copied().fold(0.0, f64::max);
        let smin = sigma.iter().copied().fold(f64::INFINITY, f64::min);
        if smax == 0.0 || smin <= RANK_TOL * smax {
            return Err(Error::RankDeficient {
                ratio: if smax == 0.0 { 0.0 } else { smin / smax },
            });
        }

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

        let mut v_s = Matrix::zeros(n, m);
        let mut u_s = Matrix::zeros(m, m);
        let mut sigma_s = Vec::with_capacity(m);
        for (dst, &src) in order.iter().enumerate() {
            let mut v: Vec<f64> = w[src].iter().map(|x| x / sigma[src]).collect();
            let mut uc = u[src].clone();
            if needs_flip(&v) {
                v.iter_mut().for_each(|x| *x = -*x);
                uc.iter_mut().for_each(|x| *x = -*x);
            }
            v_s.set_column(dst, &v);
            u_s.set_column(dst, &uc);
            sigma_s.push(sigma[src]);
        }

        let v_0 = kernel_basis(&v_s);
        let basis_class = classify_basis(&v_s);
        Ok(MeasurementSystem {
            a: a.clone(),
            u_s,
            sigma_s,
            v_s,
            v_0,
            basis_class,
            perturbation: None,
        })
    }

    /// Build a system directly from an orthonormal `V_s` (`A = V_sᵀ`, `U_s = I`, `Σ_s = I`).
    pub fn from_orthonormal_basis(v_s: &Matrix) -> Result<MeasurementSystem> {
        let (n, m) = (v_s.rows(), v_s.cols());
        if m == 0 || m >= n {
            return Err(Error::ShapeError(format!("need 0 < M < N, got V_s {n}x{m}")));
        }
        let gram = v_s.transpose().matmul(v_s);
        if gram.sub(&Matrix::identity(m)).frobenius() > 1e-10 {
            return Err(Error::ShapeError("V_s columns are not orthonormal".into()));
        }
        Ok(MeasurementSystem {
            a: v_s.transpose(),
            u_s: Matrix::identity(m),
            sigma_s: vec![1.0; m],
            v_s: v_s.clone(),
            v_0: kernel_basis(v_s),
            basis_class: classify_basis(v_s),
            perturbation: None,
        })
    }

    /// Replace `V_s` (already orthonormal) keeping `U_s, Σ_s`; `A` is rebuilt from the factors.
    pub(crate) fn with_basis(&self, v_s: Matrix, perturbation: Perturbation) -> MeasurementSystem {
        let mut us = self.u_s.clone();
        for j in 0..self.m() {
            for i in 0..self.m() {
                us[(i, j)] *= self.sigma_s[j];
            }
        }
        let a = us.matmul(&v_s.transpose());
        MeasurementSystem {
            a,
            u_s: self.u_s.clone(),
            sigma_s: self.sigma_s.clone(),
            v_0: kernel_basis(&v_s),
            basis_class: classify_basis(&v_s),
            v_s,
            perturbation: Some(perturbation),
        }
    }

    pub fn n(&self) -> usize {
        self.v_s.rows()
    }

    pub fn m(&self) -> usize {
        self.v_s.cols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn u_s(&self) -> &Matrix {
        &self.u_s
    }

    pub fn sigma_s(&self) -> &[f64] {
        &self.sigma_s
    }

    pub fn v_s(&self) -> &Matrix {
        &self.v_s
    }

    pub fn v_0(&self) -> &Matrix {
        &self.v_0
    }

    pub fn basis_class(&self) -> BasisClass {
        self.basis_class
    }

    pub fn perturbation(&self) -> Option<Perturbation> {
        self.perturbation
    }

    pub fn vertices(&self) -> SimplexVertexSet {
        SimplexVertexSet::new(self.n())
    }

    /// `t = Σ_s⁻¹ U_sᵀ y`.
    pub fn equivalent_measurement(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.m() {
            return Err(Error::ShapeError(format!(
                "measurement has {} entries, expected {}",
                y.len(),
                self.m()
            )));
        }
        let uty = self.u_s.tr_matvec(y);
        Ok(uty.iter().zip(&self.sigma_s).map(|(v, s)| v / s).collect())
    }

    /// Minimum-norm solution `V_s t` of `V_sᵀ x = t`, plus whether it lies in the simplex.
    pub fn feasible_point(&self, t: &[f64]) -> Result<(Vec<f64>, bool)> {
        if t.len() != self.m() {
            return Err(Error::ShapeError(format!(
                "t has {} entries, expected {}",
                t.len(),
                self.m()
            )));
        }
        let x0 = self.v_s.matvec(t);
        let inside = in_simplex(&x0, 1e-9);
        Ok((x0, inside))
    }

    /// Projections `V_sᵀ s_i` of the simplex vertices, origin last.
    pub fn vertex_projections(&self) -> Vec<Vec<f64>> {
        let mut p: Vec<Vec<f64>> = (0..self.n()).map(|i| self.v_s.row(i).to_vec()).collect();
        p.push(vec![0.0; self.m()]);
        p
    }

    /// Checks every structural invariant; returns the first violated one.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let im = Matrix::identity(m);
        let gram = self.v_s.transpose().matmul(&self.v_s);
        if gram.sub(&im).frobenius() > 1e-10 {
            return Err(Error::ShapeError("V_sᵀV_s != I".into()));
        }
        if n > m {
            let g0 = self.v_0.transpose().matmul(&self.v_0);
            if g0.sub(&Matrix::identity(n - m)).frobenius() > 1e-10 {
                return Err(Error::ShapeError("V_0ᵀV_0 != I".into()));
            }
            if self.v_s.transpose().matmul(&self.v_0).frobenius() > 1e-10 {
                return Err(Error::ShapeError("V_sᵀV_0 != 0".into()));
            }
        }
        let mut us = self.u_s.clone();
        for j in 0..m {
            for i in 0..m {
                us[(i, j)] *= self.sigma_s[j];
            }
        }
        let recon = us.matmul(&self.v_s.transpose());
        if recon.sub(&self.a).frobenius() > 1e-9 * self.a.frobenius().max(1e-300) {
            return Err(Error::ShapeError("U_s Σ_s V_sᵀ does not reconstruct A".into()));
        }
        if (classify_basis(&self.v_s) == BasisClass::NonnegOrthonormal)
            != (self.basis_class == BasisClass::NonnegOrthonormal)
        {
            return Err(Error::ShapeError("basis class out of date".into()));
        }
        Ok(())
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    for i in 0..cols[p].len() {
        let (x, y) = (cols[p][i], cols[q][i]);
        cols[p][i] = c * x - s * y;
        cols[q][i] = s * x + c * y;
    }
}

/// Sign convention: nonnegative column sum; on a tie the first nonzero entry is positive.
fn needs_flip(v: &[f64]) -> bool {
    let sum: f64 = v.iter().sum();
    let scale: f64 = v.iter().map(|x| x.abs()).sum();
    if sum.abs() > 1e-12 * scale {
        return sum < 0.0;
    }
    v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
}

pub fn classify_basis(v_s: &Matrix) -> BasisClass {
    if v_s.min_entry() >= NONNEG_TOL {
        BasisClass::NonnegOrthonormal
    } else {
        BasisClass::Orthonormal
    }
}

/// Orthonormal completion of the columns of `v_s`, built greedily from the
/// standard basis vector with the largest residual at each step.
pub(crate) fn kernel_basis(v_s: &Matrix) -> Matrix {
    let (n, m) = (v_s.rows(), v_s.cols());
    let mut basis: Vec<Vec<f64>> = (0..m).map(|j| v_s.column(j)).collect();
    let mut kernel: Vec<Vec<f64>> = Vec::with_capacity(n - m);
    while kernel.len() < n - m {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            if let Some(res) = orthonormalize_against(&mut e, &basis) {
                if best.as_ref().is_none_or(|(r, _)| res > *r + 1e-12) {
                    best = Some((res, e));
                }
            }
        }
        let (_, v) = best.expect("standard basis spans R^N");
        basis.push(v.clone());
        kernel.push(v);
    }
    if kernel.is_empty() {
        return Matrix::zeros(n, 0);
    }
    Matrix::from_columns(&kernel).expect("equal-length columns")
}

pub fn in_simplex(x: &[f64], tol: f64) -> bool {
    x.iter().all(|v| *v >= -tol) && x.iter().sum::<f64>() <= 1.0 + tol
}
