//! Brute-force oracles shared by the integration and acceptance tests. They are
//! deliberately naive and use no solver code from the crate.

#![allow(dead_code)]

/// Gaussian elimination with partial pivoting; `None` if (numerically) singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            out.push((0..n).filter(|i| mask >> i & 1 == 1).collect());
        }
    }
    out
}

/// `min 1ᵀx s.t. A x = y, x ≥ 0` by enumerating all basic solutions (`A` is `M×N`,
/// full row rank). Returns the optimal objective.
pub fn l1_vertex_enumeration(a: &[Vec<f64>], y: &[f64]) -> Option<f64> {
    let (m, n) = (a.len(), a[0].len());
    let mut best: Option<f64> = None;
    for s in subsets(n, m) {
        let sub: Vec<Vec<f64>> = a.iter().map(|row| s.iter().map(|&j| row[j]).collect()).collect();
        if let Some(xs) = gauss_solve(sub, y.to_vec()) {
            if xs.iter().all(|v| *v >= -1e-10) {
                let obj: f64 = xs.iter().sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
    }
    best
}

/// Minimum-norm point of `{x ≥ 0, Σx ≤ 1, C x = d}` by enumerating supports and
/// whether `Σx ≤ 1` is active; each candidate is the least-norm solution of its
/// equality system, and the optimum is the best feasible candidate.
pub fn min_norm_active_set(c: &[Vec<f64>], d: &[f64]) -> Option<Vec<f64>> {
    let n = c[0].len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        for sum_active in [false, true] {
            let mut rows: Vec<Vec<f64>> = c.iter().map(|r| s.iter().map(|&j| r[j]).collect()).collect();
            let mut rhs = d.to_vec();
            if sum_active {
                rows.push(vec![1.0; s.len()]);
                rhs.push(1.0);
            }
            if rows.len() > s.len() {
                continue;
            }
            // least-norm: x_S = Rᵀ (R Rᵀ)⁻¹ rhs
            let k = rows.len();
            let gram: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum()).collect())
                .collect();
            let Some(nu) = gauss_solve(gram, rhs.clone()) else { continue };
            let xs: Vec<f64> = (0..s.len()).map(|q| (0..k).map(|i| rows[i][q] * nu[i]).sum()).collect();
            let mut x = vec![0.0; n];
            for (q, &j) in s.iter().enumerate() {
                x[j] = xs[q];
            }
            let feasible = x.iter().all(|v| *v >= -1e-10)
                && x.iter().sum::<f64>() <= 1.0 + 1e-10
                && c.iter().zip(d).all(|(r, di)| (r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - di).abs() < 1e-9);
            if feasible {
                let norm: f64 = x.iter().map(|v| v * v).sum();
                if best.as_ref().is_none_or(|(b, _)| norm < *b) {
                    best = Some((norm, x));
                }
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss-Legendre quadrature of `f` over `[lo, hi]` split at `breaks`.
pub fn integrate_1d(f: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64, breaks: &[f64], order: usize) -> f64 {
    let mut pts: Vec<f64> = std::iter::once(lo)
        .chain(breaks.iter().copied().filter(|b| *b > lo && *b < hi))
        .chain(std::iter::once(hi))
        .collect();
    pts.sort_by(f64::total_cmp);
    let gl = gauss_legendre(order);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        for (x, wt) in &gl {
            acc += wt * half * f(mid + half * x);
        }
    }
    acc
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `∫ f(t) dt` over the image of the simplex under `t = V_sᵀx`, for `M ∈ {1, 2}`.
/// `p` are the vertex projections. The integrands of interest are piecewise
/// polynomial with breaks at the projected vertices (outer variable) and at the
/// projected edge crossings (inner variable), so composite Gauss-Legendre between
/// breaks is exact up to rounding.
pub fn integrate_over_image(p: &[Vec<f64>], f: &mut impl FnMut(&[f64]) -> f64, order: usize) -> f64 {
    let z: Vec<f64> = p.iter().map(|v| v[0]).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match p[0].len() {
        1 => integrate_1d(&mut |t| f(&[t]), lo, hi, &z, order),
        2 => {
            let mut outer = |t1: f64| {
                let mut crossings = Vec::new();
                for i in 0..p.len() {
                    for j in i + 1..p.len() {
                        let (zi, zj) = (p[i][0], p[j][0]);
                        if (zi - t1) * (zj - t1) <= 0.0 && zi != zj {
                            let l = (t1 - zi) / (zj - zi);
                            crossings.push((1.0 - l) * p[i][1] + l * p[j][1]);
                        }
                    }
                }
                if crossings.is_empty() {
                    return 0.0;
                }
                let lo2 = crossings.iter().copied().fold(f64::INFINITY, f64::min);
                let hi2 = crossings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                integrate_1d(&mut |t2| f(&[t1, t2]), lo2, hi2, &crossings, order)
            };
            integrate_1d(&mut outer, lo, hi, &z, order)
        }
        m => panic!("integrate_over_image supports M ≤ 2, got {m}"),
    }
}
