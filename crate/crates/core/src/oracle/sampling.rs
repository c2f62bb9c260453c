//! Monte Carlo ground truth: uniform simplex draws and a polytope sampler.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measurement::{kernel_basis, MeasurementSystem};
use crate::numeric::Dd;
use crate::oracle::lp::optimize_over_slice;
use crate::rng::{split, Rng};

const BURN_IN: usize = 1000;
const THINNING: usize = 5;
const BATCHES: usize = 50;
const LOW_ACCEPTANCE: f64 = 1e-6;

/// Uniform draw from the solid simplex: normalised exponentials, last coordinate dropped.
pub fn sample_uniform_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e[..n].iter().map(|x| x / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSample {
    pub n_samples: usize,
    /// Hit-and-run mean of the uniform distribution on `P_t`.
    pub centroid_mean: Vec<f64>,
    /// Batch-means standard errors of `centroid_mean`.
    pub centroid_stderr: Vec<f64>,
    /// Rejection-sampling estimate of `vol(P_t)` against the bounding box.
    pub volume_est: f64,
    pub volume_stderr: f64,
    /// Rejection-sampling estimates of `μ_k = ∫_{P_t} x_k`.
    pub moment_est: Vec<f64>,
    pub moment_stderr: Vec<f64>,
    pub acceptance: f64,
    /// Acceptance fell below `1e−6`; estimates are unreliable.
    pub low_acceptance: bool,
    pub seed: u64,
}

impl PolytopeSample {
    /// Ratio estimate `μ / vol` from the iid rejection draws.
    pub fn rejection_centroid(&self) -> Vec<f64> {
        self.moment_est.iter().map(|m| m / self.volume_est).collect()
    }
}

fn in_simplex(x: &[f64]) -> bool {
    x.iter().all(|v| *v >= 0.0) && x.iter().sum::<f64>() <= 1.0
}

pub fn mc_polytope(
    sys: &MeasurementSystem,
    t: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<PolytopeSample> {
    mc_polytope_basis(sys.v_s(), t, n_samples, seed)
}

/// Sampler for an arbitrary orthonormal `V_s` (`N×M`, `M ≤ N`). Points are
/// parametrised as `x = V_s t + V_0 z`; `V_0` is orthonormal, so Lebesgue measure in
/// `z` is the face measure on `P_t`.
pub fn mc_polytope_basis(v_s: &Matrix, t: &[f64], n_samples: usize, seed: u64) -> Result<PolytopeSample> {
    let (n, m) = (v_s.rows(), v_s.cols());
    if t.len() != m || n_samples == 0 {
        return Err(Error::ShapeError("t length or sample count invalid".into()));
    }
    let x_c = v_s.matvec(t);
    let d = n - m;
    if d == 0 {
        if !crate::measurement::in_simplex(&x_c, 1e-9) {
            return Err(Error::InfeasibleT);
        }
        return Ok(PolytopeSample {
            n_samples,
            centroid_mean: x_c.clone(),
            centroid_stderr: vec![0.0; n],
            volume_est: 1.0,
            volume_stderr: 0.0,
            moment_est: x_c,
            moment_stderr: vec![0.0; n],
            acceptance: 1.0,
            low_acceptance: false,
            seed,
        });
    }
    let v_0 = kernel_basis(v_s);
    let cols: Vec<Vec<f64>> = (0..d).map(|j| v_0.column(j)).collect();

    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    let mut interior = vec![0.0; n];
    for j in 0..d {
        let min = optimize_over_slice(v_s, t, &cols[j], true).map_err(|e| match e {
            Error::Infeasible => Error::InfeasibleT,
            other => other,
        })?;
        let max = optimize_over_slice(v_s, t, &cols[j], false)?;
        lo[j] = min.objective;
        hi[j] = max.objective;
        for i in 0..n {
            interior[i] += (min.x[i] + max.x[i]) / (2 * d) as f64;
        }
    }
    let box_vol: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(0.0)).product();

    // iid rejection sampling: volume and moments
    let mut rng = split(seed, 0);
    let mut z = vec![0.0; d];
    let mut x = vec![0.0; n];
    let mut accepted = 0usize;
    // double-double sums: a coordinate that is constant on the slice would otherwise
    // pick up a systematic rounding bias over a million identical additions
    let mut msum = vec![Dd::ZERO; n];
    let mut msq = vec![Dd::ZERO; n];
    if box_vol > 0.0 {
        for _ in 0..n_samples {
            for j in 0..d {
                z[j] = lo[j] + (hi[j] - lo[j]) * rng.random::<f64>();
            }
            for i in 0..n {
                x[i] = x_c[i] + (0..d).map(|j| cols[j][i] * z[j]).sum::<f64>();
            }
            if in_simplex(&x) {
                accepted += 1;
                for i in 0..n {
                    msum[i] += Dd::from_f64(x[i]);
                    msq[i] += Dd::from_f64(x[i]) * Dd::from_f64(x[i]);
                }
            }
        }
    }
    let ns = n_samples as f64;
    let p = accepted as f64 / ns;
    let volume_est = box_vol * p;
    let volume_stderr = box_vol * (p * (1.0 - p) / ns).sqrt();
    let moment_est: Vec<f64> = msum.iter().map(|&s| (s.mul_f64(box_vol) / Dd::from_f64(ns)).to_f64()).collect();
    let moment_stderr: Vec<f64> = (0..n)
        .map(|i| {
            let mean = msum[i] / Dd::from_f64(ns);
            let var = (msq[i] / Dd::from_f64(ns) - mean * mean).to_f64().max(0.0);
            box_vol * (var / ns).sqrt()
        })
        .collect();

    // hit-and-run chain for the centroid
    let (centroid_mean, centroid_stderr) = if box_vol > 0.0 {
        hit_and_run(&cols, interior, n_samples, &mut split(seed, 1))
    } else {
        (interior, vec![0.0; n])
    };

    Ok(PolytopeSample {
        n_samples,
        centroid_mean,
        centroid_stderr,
        volume_est,
        volume_stderr,
        moment_est,
        moment_stderr,
        acceptance: p,
        low_acceptance: p < LOW_ACCEPTANCE,
        seed,
    })
}

fn hit_and_run(cols: &[Vec<f64>], start: Vec<f64>, n_samples: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let n = start.len();
    let d = cols.len();
    let mut x = start;
    let mut w = vec![0.0; n];
    let per_batch = n_samples.div_ceil(BATCHES);
    let mut batch_sum = vec![0.0; n];
    let mut batch_count = 0usize;
    let mut batch_means: Vec<Vec<f64>> = Vec::new();
    let mut total = vec![0.0; n];
    let steps = BURN_IN + n_samples * THINNING;
    for step in 0..steps {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..n {
            w[i] = (0..d).map(|j| cols[j][i] * u[j]).sum();
        }
        let (mut s_lo, mut s_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            if w[i] > 0.0 {
                s_lo = s_lo.max(-x[i] / w[i]);
            } else if w[i] < 0.0 {
                s_hi = s_hi.min(-x[i] / w[i]);
            }
        }
        let ws: f64 = w.iter().sum();
        let slack = 1.0 - x.iter().sum::<f64>();
        if ws > 0.0 {
            s_hi = s_hi.min(slack / ws);
        } else if ws < 0.0 {
            s_lo = s_lo.max(slack / ws);
        }
        if s_hi > s_lo {
            let s = s_lo + (s_hi - s_lo) * rng.random::<f64>();
            for i in 0..n {
                x[i] = (x[i] + s * w[i]).max(0.0);
            }
        }
        if step >= BURN_IN && (step - BURN_IN) % THINNING == 0 {
            for i in 0..n {
                batch_sum[i] += x[i];
                total[i] += x[i];
            }
            batch_count += 1;
            if batch_count == per_batch {
                batch_means.push(batch_sum.iter().map(|s| s / per_batch as f64).collect());
                batch_sum.iter_mut().for_each(|s| *s = 0.0);
                batch_count = 0;
            }
        }
    }
    let kept = n_samples as f64;
    let mean: Vec<f64> = total.iter().map(|s| s / kept).collect();
    let b = batch_means.len().max(2) as f64;
    let stderr = (0..n)
        .map(|i| {
            let var = batch_means
                .iter()
                .map(|bm| (bm[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (b - 1.0);
            (var / b).sqrt()
        })
        .collect();
    (mean, stderr)
}
