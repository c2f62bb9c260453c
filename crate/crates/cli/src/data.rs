//! Soft-classification data: CSV ingestion and a synthetic stand-in for classifier outputs.

use std::path::Path;

use centroid_core::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::csvio::read_rows;
use crate::error::{CliError, CliResult};

/// Allowed deviation of a row sum from 1 before the row is rejected.
pub const SUM_TOL: f64 = 1e-6;

/// Maps a probability vector of length `N+1` into the solid simplex in `R^N`: the
/// row is renormalised (when its sum is within [`SUM_TOL`] of 1) and the last,
/// uninformative component is dropped.
pub fn embed_probability_rows(rows: &[Vec<f64>]) -> CliResult<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let s: f64 = r.iter().sum();
            if r.len() < 2 || r.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > SUM_TOL {
                return Err(CliError::RowNotOnSimplex(i));
            }
            Ok(r[..r.len() - 1].iter().map(|v| v / s).collect())
        })
        .collect()
}

pub fn ingest_softmax_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    embed_probability_rows(&read_rows(path)?)
}

/// Peaked probability vectors over `classes` outcomes: a class `c` is drawn uniformly
/// and `p ~ Dirichlet(α)` with `α_c = 1/T` and `α_j = 1` elsewhere. Lower temperature
/// `T` concentrates mass on `c`, mimicking a confident classifier; the other entries
/// keep the spread of a flat Dirichlet instead of collapsing towards zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakedDirichlet {
    pub classes: usize,
    pub temperature: f64,
}

impl PeakedDirichlet {
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let peak = rng.random_range(0..self.classes);
        let shape = Gamma::new(1.0 / self.temperature, 1.0).expect("positive temperature");
        let g: Vec<f64> = (0..self.classes)
            .map(|j| if j == peak { shape.sample(rng) } else { Exp1.sample(rng) })
            .collect();
        let s: f64 = g.iter().sum();
        g.iter().map(|v| v / s).collect()
    }

    pub fn samples(&self, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }

    /// Temperature whose mean top entry matches `target`, found by bisection in
    /// `ln T`. Every trial replays the same random stream, so the result is
    /// reproducible and the bisection sees a smooth function.
    pub fn calibrate(classes: usize, target: f64, rng: &mut Rng) -> CliResult<PeakedDirichlet> {
        let floor = 1.0 / classes as f64;
        if classes < 2 || !(target > floor && target < 1.0) {
            return Err(CliError::Config(format!(
                "top-entry target must lie in ({floor}, 1) for {classes} classes"
            )));
        }
        let stream = rng.clone();
        let mean_top = |ln_t: f64| {
            let g = PeakedDirichlet {
                classes,
                temperature: ln_t.exp(),
            };
            mean_top_entry(&g.samples(CALIBRATION_DRAWS, &mut stream.clone()))
        };
        // mean top entry decreases with temperature
        let (mut lo, mut hi) = (-12.0f64, 4.0f64);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if mean_top(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(PeakedDirichlet {
            classes,
            temperature: (0.5 * (lo + hi)).exp(),
        })
    }
}

const CALIBRATION_DRAWS: usize = 20_000;

pub fn mean_top_entry(rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).sum::<f64>() / rows.len() as f64
}
