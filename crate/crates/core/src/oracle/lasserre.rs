//! Closed-form volume of a single slice `Δ ∩ {⟨a,x⟩ = t}`, `‖a‖ = 1`.

use crate::error::{Error, Result};
use crate::numeric::{binomial, factorial, Dd, Wide};

/// Truncated power `(x)_+^k`, with the step taking 1/2 at `x = 0` when `k = 0`.
fn trunc_pow(x: Dd, k: u32) -> Dd {
    if k == 0 {
        return match x.hi.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => Dd::ONE,
            Some(std::cmp::Ordering::Equal) => Dd::from_f64(0.5),
            _ => Dd::ZERO,
        };
    }
    if x.hi <= 0.0 {
        Dd::ZERO
    } else {
        x.powi(k)
    }
}

/// `Σ_n (t − z_n)_+^{N−1} / ((N−1)! ∏_{n'≠n} (z_{n'} − z_n))` over the projections
/// `z = (a_1, …, a_N, 0)` of the simplex vertices. Coinciding projections are
/// handled with a confluent (Hermite) divided-difference table.
pub fn lasserre_slice_volume(a: &[f64], t: f64) -> Result<f64> {
    let n = a.len();
    if n == 0 {
        return Err(Error::ShapeError("empty direction".into()));
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::ShapeError(format!("direction must be a unit vector, norm = {norm}")));
    }
    let mut z: Vec<f64> = a.to_vec();
    z.push(0.0);
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if t < lo || t > hi {
        return Ok(0.0);
    }
    let distinct = (0..z.len()).all(|i| (i + 1..z.len()).all(|j| z[i] != z[j]));
    let v = if distinct { direct_sum(&z, t) } else { hermite(&z, t) };
    Ok(v.to_f64())
}

fn direct_sum(z: &[f64], t: f64) -> Wide {
    let k = (z.len() - 2) as u32;
    let td = Dd::from_f64(t);
    let mut acc = Wide::ZERO;
    for (i, &zi) in z.iter().enumerate() {
        let num = trunc_pow(td - Dd::from_f64(zi), k);
        if num.is_zero() {
            continue;
        }
        let mut den = Wide::ONE;
        for (j, &zj) in z.iter().enumerate() {
            if j != i {
                den = den * Wide::from_dd(Dd::from_f64(zj) - Dd::from_f64(zi));
            }
        }
        acc += Wide::from_dd(num) / den;
    }
    acc / factorial(k)
}

/// `(−1)^N [z_0, …, z_N] f` for `f(z) = (t − z)_+^{N−1} / (N−1)!`.
fn hermite(z: &[f64], t: f64) -> Wide {
    let mut z = z.to_vec();
    z.sort_by(f64::total_cmp);
    let len = z.len();
    let k = (len - 2) as u32;
    let td = Dd::from_f64(t);
    let kf = factorial(k).to_dd();
    // f^{(j)}(x)/j! = (−1)^j C(k, j) (t − x)_+^{k−j} / k!
    let deriv = |x: f64, j: u32| -> Dd {
        if j > k {
            return Dd::ZERO;
        }
        let mut v = trunc_pow(td - Dd::from_f64(x), k - j).mul_f64(binomial(k, j)) / kf;
        if j % 2 == 1 {
            v = -v;
        }
        v
    };
    let mut col: Vec<Dd> = z.iter().map(|&x| deriv(x, 0)).collect();
    for level in 1..len {
        let mut next = Vec::with_capacity(len - level);
        for i in 0..len - level {
            if z[i + level] == z[i] {
                next.push(deriv(z[i], level as u32));
            } else {
                next.push((col[i + 1] - col[i]) / (Dd::from_f64(z[i + level]) - Dd::from_f64(z[i])));
            }
        }
        col = next;
    }
    let v = Wide::from_dd(col[0]);
    if (len - 1) % 2 == 1 {
        -v
    } else {
        v
    }
}
