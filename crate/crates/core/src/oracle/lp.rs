//! Dense two-phase primal simplex for `min cᵀx  s.t.  A x = b, x ≥ 0`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 50_000;
/// Consecutive degenerate pivots after which Dantzig's rule gives way to Bland's.
const STALL_LIMIT: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic variable per remaining constraint row.
    pub basis: Vec<usize>,
    /// Some nonbasic column has zero reduced cost, so the optimum may not be unique.
    pub tie: bool,
}

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    /// Row `rows` is the reduced-cost row.
    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.at(r, c);
        for j in 0..w {
            self.data[r * w + j] /= p;
        }
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f == 0.0 {
                continue;
            }
            for j in 0..w {
                self.data[i * w + j] -= f * self.data[r * w + j];
            }
        }
        self.basis[r] = c;
    }

    /// Runs the simplex loop with entering columns restricted to `0..allowed`.
    fn optimize(&mut self, allowed: usize) -> Result<()> {
        let cost = self.rows;
        let mut stall = 0;
        for _ in 0..MAX_ITERS {
            let bland = stall >= STALL_LIMIT;
            let mut enter = None;
            let mut best = -OPT_TOL;
            for j in 0..allowed {
                let rc = self.at(cost, j);
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(Error::Unbounded);
            };
            stall = if ratio.abs() <= 1e-14 { stall + 1 } else { 0 };
            self.pivot(r, c);
        }
        Err(Error::ConvergenceFailure {
            residual: f64::NAN,
            iterations: MAX_ITERS,
        })
    }
}

pub fn solve_standard_form(a: &Matrix, b: &[f64], c: &[f64]) -> Result<LpSolution> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m || c.len() != n {
        return Err(Error::ShapeError("LP dimensions do not match".into()));
    }
    let width = n + m + 1;
    let mut t = Tableau {
        rows: m,
        width,
        data: vec![0.0; (m + 1) * width],
        basis: (n..n + m).collect(),
    };
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t.data[i * width + j] = s * a[(i, j)];
        }
        t.data[i * width + n + i] = 1.0;
        t.data[i * width + width - 1] = s * b[i];
    }
    // phase I: minimise the sum of artificials
    for j in 0..n {
        t.data[m * width + j] = -(0..m).map(|i| t.at(i, j)).sum::<f64>();
    }
    t.data[m * width + width - 1] = -(0..m).map(|i| t.rhs(i)).sum::<f64>();
    t.optimize(n)?;
    let scale = 1.0 + b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if -t.at(m, width - 1) > 1e-9 * scale {
        return Err(Error::Infeasible);
    }
    // drive remaining artificials out; rows where that fails are redundant
    let mut keep = vec![true; m];
    for i in 0..m {
        if t.basis[i] >= n {
            match (0..n).find(|&j| t.at(i, j).abs() > 1e-9) {
                Some(j) => t.pivot(i, j),
                None => keep[i] = false,
            }
        }
    }
    if keep.iter().any(|k| !k) {
        let mut data = Vec::with_capacity(t.data.len());
        let mut basis = Vec::new();
        for i in 0..m {
            if keep[i] {
                data.extend_from_slice(&t.data[i * width..(i + 1) * width]);
                basis.push(t.basis[i]);
            }
        }
        data.extend_from_slice(&t.data[m * width..]);
        t = Tableau {
            rows: basis.len(),
            width,
            data,
            basis,
        };
    }
    // phase II
    let cost = t.rows;
    for j in 0..width {
        let base = if j < n { c[j] } else { 0.0 };
        let mut v = if j == width - 1 { 0.0 } else { base };
        for i in 0..t.rows {
            let cb = c[t.basis[i]];
            v -= cb * t.at(i, j);
        }
        t.data[cost * width + j] = v;
    }
    t.optimize(n)?;
    let tie = (0..n).any(|j| !t.basis.contains(&j) && t.at(cost, j).abs() <= OPT_TOL);
    let mut x = vec![0.0; n];
    for i in 0..t.rows {
        x[t.basis[i]] = t.rhs(i).max(0.0);
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        basis: t.basis,
        tie,
    })
}

/// Optimise `c·x` over `Δ ∩ {V_sᵀx = t}` (`minimize = false` maximises). The simplex
/// inequality gets a slack column.
pub fn optimize_over_slice(v_s: &Matrix, t: &[f64], c: &[f64], minimize: bool) -> Result<LpSolution> {
    let (n, m) = (v_s.rows(), v_s.cols());
    let mut a = Matrix::zeros(m + 1, n + 1);
    for j in 0..m {
        for i in 0..n {
            a[(j, i)] = v_s[(i, j)];
        }
    }
    for i in 0..n {
        a[(m, i)] = 1.0;
    }
    a[(m, n)] = 1.0;
    let mut b = t.to_vec();
    b.push(1.0);
    let mut cost: Vec<f64> = c.iter().map(|x| if minimize { *x } else { -x }).collect();
    cost.push(0.0);
    let mut sol = solve_standard_form(&a, &b, &cost)?;
    sol.x.truncate(n);
    sol.objective = c.iter().zip(&sol.x).map(|(ci, xi)| ci * xi).sum();
    Ok(sol)
}
