//! eMSE benchmark: centroid vs ℓ1 vs ℓ2 over one fixed Gaussian measurement matrix.

use std::path::{Path, PathBuf};
use std::time::Instant;

use centroid_core::exp_poly::{check_configuration, default_perturbation, perturb_basis};
use centroid_core::instances::gaussian_matrix;
use centroid_core::oracle::{emse, l1_solve, l2_baseline, sample_uniform_simplex};
use centroid_core::rng::split;
use centroid_core::{centroid_estimate, compile, Backend, Matrix, MeasurementSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ingest_softmax_csv, PeakedDirichlet};
use crate::error::{CliError, CliResult};

const STREAM_MATRIX: u64 = 0;
const STREAM_SOURCE: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Engine,
    Network,
}

/// Where the ground-truth vectors come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Uniform,
    /// Synthetic classifier outputs with the given mean top entry.
    Peaked(f64),
    /// Probability rows read from a CSV file.
    Csv(PathBuf),
}

impl Source {
    pub fn parse(s: &str, top_entry: Option<f64>) -> CliResult<Source> {
        match s {
            "uniform" => Ok(Source::Uniform),
            "peaked" => Ok(Source::Peaked(top_entry.ok_or_else(|| {
                CliError::Config("source \"peaked\" needs top_entry".into())
            })?)),
            path => Ok(Source::Csv(PathBuf::from(path))),
        }
    }

    fn label(&self) -> String {
        match self {
            Source::Uniform => "uniform".into(),
            Source::Peaked(p) => format!("peaked({p})"),
            Source::Csv(p) => p.display().to_string(),
        }
    }
}

/// TOML form of a bench run; every field may be overridden on the command line.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub n: Option<usize>,
    pub m_list: Option<Vec<usize>>,
    pub ns: Option<usize>,
    pub seed: Option<u64>,
    pub source: Option<String>,
    pub top_entry: Option<f64>,
    pub backend: Option<BackendKind>,
}

impl BenchFile {
    pub fn load(path: &Path) -> CliResult<BenchFile> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub n: Option<usize>,
    pub m_list: Vec<usize>,
    pub ns: usize,
    pub seed: u64,
    pub source: Source,
    pub backend: BackendKind,
}

impl BenchConfig {
    pub fn from_file(f: BenchFile) -> CliResult<BenchConfig> {
        let source = Source::parse(f.source.as_deref().unwrap_or("uniform"), f.top_entry)?;
        let cfg = BenchConfig {
            n: f.n.or(match source {
                Source::Csv(_) => None,
                _ => Some(9),
            }),
            m_list: f.m_list.unwrap_or_else(|| (1..=5).collect()),
            ns: f.ns.unwrap_or(500),
            seed: f.seed.unwrap_or(0),
            source,
            backend: f.backend.unwrap_or(BackendKind::Engine),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if self.ns == 0 {
            return Err(CliError::Config("ns must be positive".into()));
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return Err(CliError::Config("m_list must be non-empty and positive".into()));
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(CliError::Config("n must be at least 2".into()));
            }
            if let Some(&m) = self.m_list.iter().find(|&&m| m >= n) {
                return Err(CliError::Config(format!("M = {m} must be below N = {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub method: &'static str,
    pub emse: f64,
    pub runtime_s: f64,
    /// Rows where the centroid fell back to the ℓ1 solution.
    pub underflow: usize,
    pub clamped: usize,
    /// ℓ1 solutions with a tied optimum.
    pub ties: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub n: usize,
    pub ns: usize,
    pub config: BenchConfig,
    pub perturbed_m: Vec<usize>,
    pub rows: Vec<BenchRow>,
}

/// Ground-truth vectors in the solid simplex.
pub fn load_source(cfg: &BenchConfig) -> CliResult<Vec<Vec<f64>>> {
    let mut rng = split(cfg.seed, STREAM_SOURCE);
    let xs = match &cfg.source {
        Source::Uniform => {
            let n = cfg.n.unwrap_or(9);
            (0..cfg.ns).map(|_| sample_uniform_simplex(n, &mut rng)).collect()
        }
        Source::Peaked(top) => {
            let n = cfg.n.unwrap_or(9);
            let g = PeakedDirichlet::calibrate(n + 1, *top, &mut split(cfg.seed, STREAM_CALIBRATION))?;
            crate::data::embed_probability_rows(&g.samples(cfg.ns, &mut rng))?
        }
        Source::Csv(path) => {
            let mut xs = ingest_softmax_csv(path)?;
            if xs.len() < cfg.ns {
                return Err(CliError::Config(format!(
                    "{} has {} rows, ns = {}",
                    path.display(),
                    xs.len(),
                    cfg.ns
                )));
            }
            xs.truncate(cfg.ns);
            if let Some(n) = cfg.n {
                if xs[0].len() != n {
                    return Err(CliError::Config(format!("data has N = {}, config says {n}", xs[0].len())));
                }
            }
            xs
        }
    };
    Ok(xs)
}

/// Measurement system for the first `m` rows of `a`, perturbed if vertex projections collide.
fn system_for(a: &Matrix, m: usize, seed: u64) -> CliResult<MeasurementSystem> {
    let rows: Vec<Vec<f64>> = (0..m).map(|i| a.row(i).to_vec()).collect();
    let sys = MeasurementSystem::decompose(&Matrix::from_rows(&rows)?)?;
    if check_configuration(&sys).is_err() {
        let eps = default_perturbation(&sys);
        return Ok(perturb_basis(&sys, eps, seed));
    }
    Ok(sys)
}

pub fn run_bench(cfg: &BenchConfig) -> CliResult<BenchReport> {
    cfg.validate()?;
    let xs = load_source(cfg)?;
    let n = xs[0].len();
    let m_max = *cfg.m_list.iter().max().expect("validated");
    if m_max >= n {
        return Err(CliError::Config(format!("M = {m_max} must be below N = {n}")));
    }
    // drawn once; each M uses its leading rows
    let a_full = gaussian_matrix(m_max, n, &mut split(cfg.seed, STREAM_MATRIX));
    let mut rows = Vec::new();
    let mut perturbed_m = Vec::new();
    for &m in &cfg.m_list {
        let sys = system_for(&a_full, m, cfg.seed)?;
        if sys.perturbation().is_some() {
            perturbed_m.push(m);
        }
        let a = sys.a().clone();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| a.matvec(x)).collect();

        let start = Instant::now();
        let net = match cfg.backend {
            BackendKind::Engine => None,
            BackendKind::Network => Some(compile(&sys)?),
        };
        let backend = net.as_ref().map_or(Backend::Engine, Backend::Network);
        let centroid: Vec<_> = ys
            .par_iter()
            .map(|y| {
                let t = sys.equivalent_measurement(y)?;
                centroid_estimate(&sys, &t, backend)
            })
            .collect::<Result<_, _>>()?;
        let t_centroid = start.elapsed().as_secs_f64();
        drop(net);

        let start = Instant::now();
        let l1: Vec<_> = ys.par_iter().map(|y| l1_solve(&a, y)).collect::<Result<_, _>>()?;
        let t_l1 = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let l2: Vec<Vec<f64>> = ys.par_iter().map(|y| l2_baseline(&a, y)).collect::<Result<_, _>>()?;
        let t_l2 = start.elapsed().as_secs_f64();

        let underflow = centroid.iter().filter(|r| r.flags.underflow).count();
        let clamped = centroid.iter().filter(|r| r.flags.clamped).count();
        let ties = l1.iter().filter(|s| s.tie).count();
        let x_c: Vec<Vec<f64>> = centroid.into_iter().map(|r| r.x_hat).collect();
        let x_1: Vec<Vec<f64>> = l1.into_iter().map(|s| s.x).collect();
        let row = |method, est: &[Vec<f64>], runtime_s| -> CliResult<BenchRow> {
            Ok(BenchRow {
                m,
                method,
                emse: emse(&xs, est)?,
                runtime_s,
                underflow: if method == "centroid" { underflow } else { 0 },
                clamped: if method == "centroid" { clamped } else { 0 },
                ties: if method == "l1" { ties } else { 0 },
            })
        };
        rows.push(row("centroid", &x_c, t_centroid)?);
        rows.push(row("l1", &x_1, t_l1)?);
        rows.push(row("l2", &l2, t_l2)?);
    }
    Ok(BenchReport {
        n,
        ns: xs.len(),
        config: cfg.clone(),
        perturbed_m,
        rows,
    })
}

impl BenchReport {
    pub fn emse(&self, m: usize, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.m == m && r.method == method).map(|r| r.emse)
    }

    /// Plot-ready CSV. Runtimes vary between runs, so they are written only when
    /// `timings` is set (otherwise `NA`) to keep the file byte-reproducible.
    pub fn to_csv(&self, timings: bool) -> String {
        let c = &self.config;
        let perturbed: Vec<String> = self.perturbed_m.iter().map(|m| m.to_string()).collect();
        let mut out = format!(
            "# N={} Ns={} seed={} source={} backend={:?} perturbed_M=[{}]\n\
             # underflow rows are kept: the centroid method uses the l1 fallback for them and counts are reported\n",
            self.n,
            self.ns,
            c.seed,
            c.source.label(),
            c.backend,
            perturbed.join(" ")
        )
        .to_lowercase();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["M", "method", "eMSE", "runtime_s", "underflow", "clamped", "l1_ties"])
            .expect("in-memory write");
        for r in &self.rows {
            let runtime = if timings { format!("{:.6}", r.runtime_s) } else { "NA".into() };
            w.write_record([
                r.m.to_string(),
                r.method.to_string(),
                format!("{:.10e}", r.emse),
                runtime,
                r.underflow.to_string(),
                r.clamped.to_string(),
                r.ties.to_string(),
            ])
            .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("ascii"));
        out
    }
}
