//! Command-line surface for the centroid estimator: network compilation, single
//! queries with Monte Carlo cross-checks, batch estimation, benchmarks and data
//! generation.

pub mod bench;
pub mod csvio;
pub mod data;
pub mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use centroid_core::exp_poly::{check_configuration, perturb_basis};
use centroid_core::ilt::evaluate_all;
use centroid_core::instances::gaussian_matrix;
use centroid_core::network::basis_hash;
use centroid_core::oracle::{lasserre_slice_volume, mc_polytope, sample_uniform_simplex};
use centroid_core::rng::split;
use centroid_core::{centroid_estimate, compile, Backend, BasisClass, Error as CoreError, MeasurementSystem, NetworkSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

pub use bench::{run_bench, BackendKind, BenchConfig, BenchFile, BenchReport, Source};
pub use data::{embed_probability_rows, ingest_softmax_csv, mean_top_entry, PeakedDirichlet};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "centroid", version, about = "Exact simplex-slice centroids and their compiled networks")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo sample count for oracle cross-checks.
    #[arg(long, global = true, default_value_t = 100_000)]
    pub samples: usize,
    /// Perturb V_s by this scale when vertex projections collide.
    #[arg(long, global = true)]
    pub perturb_eps: Option<f64>,
    /// Accept bases with negative entries (results are then empirical).
    #[arg(long, global = true)]
    pub allow_negative_basis: bool,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Output file for the command's artifact (stdout if omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a measurement matrix into a network document.
    Compile {
        matrix: PathBuf,
    },
    /// Volume of the slice polytope.
    Vol(Query),
    /// Centroid estimate for one measurement.
    Centroid(Query),
    /// Monte Carlo volume, moments and centroid.
    Oracle(Query),
    /// Batch centroid estimation, one CSV row per measurement.
    Estimate {
        #[arg(long)]
        matrix: PathBuf,
        /// Precompiled network to use as the backend.
        #[arg(long)]
        net: Option<PathBuf>,
        /// Rows of y = A x.
        #[arg(long, required_unless_present = "t_file", conflicts_with = "t_file")]
        y_file: Option<PathBuf>,
        /// Rows of t = V_sᵀ x.
        #[arg(long)]
        t_file: Option<PathBuf>,
    },
    /// Empirical MSE of centroid, ℓ1 and ℓ2 estimators.
    Bench(BenchArgs),
    /// Generate data: uniform simplex points, peaked probability rows or a Gaussian matrix.
    Sample {
        #[arg(value_enum)]
        kind: SampleKind,
        #[arg(long, default_value_t = 9)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Mean top entry for peaked rows.
        #[arg(long)]
        top_entry: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleKind {
    Uniform,
    Peaked,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct Query {
    /// Measurement matrix A (decomposed into V_s).
    #[arg(long, conflicts_with = "basis")]
    pub matrix: Option<PathBuf>,
    /// Orthonormal N×M basis V_s given directly.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "y")]
    pub t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub y: Option<Vec<f64>>,
    /// Cross-check against the Monte Carlo oracle.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML file with any of: n, m_list, ns, seed, source, top_entry, backend.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub m_list: Option<Vec<usize>>,
    #[arg(long)]
    pub ns: Option<usize>,
    /// `uniform`, `peaked` or a CSV path of probability rows.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub top_entry: Option<f64>,
    /// Record wall-clock runtimes (makes the CSV run-dependent).
    #[arg(long)]
    pub timings: bool,
}

struct Ctx<'a> {
    cli: &'a Cli,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit(&mut self, text: &str) -> CliResult<()> {
        match &self.cli.out {
            Some(p) => write_file(p, text),
            None => self.print(text),
        }
    }

    fn print(&mut self, text: &str) -> CliResult<()> {
        self.stdout
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
    }

    fn print_json(&mut self, v: &impl Serialize) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(v).expect("serialisable");
        s.push('\n');
        self.emit(&s)
    }
}

fn write_file(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|source| CliError::Io {
        path: p.display().to_string(),
        source,
    })
}

fn read_file(p: &Path) -> CliResult<String> {
    fs::read_to_string(p).map_err(|source| CliError::Io {
        path: p.display().to_string(),
        source,
    })
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let mut ctx = Ctx { cli, stdout };
    match &cli.command {
        Command::Compile { matrix } => cmd_compile(&mut ctx, matrix),
        Command::Vol(q) => cmd_vol(&mut ctx, q),
        Command::Centroid(q) => cmd_centroid(&mut ctx, q),
        Command::Oracle(q) => cmd_oracle(&mut ctx, q),
        Command::Estimate {
            matrix,
            net,
            y_file,
            t_file,
        } => cmd_estimate(&mut ctx, matrix, net.as_deref(), y_file.as_deref(), t_file.as_deref()),
        Command::Bench(b) => cmd_bench(&mut ctx, b),
        Command::Sample { kind, n, count, top_entry } => cmd_sample(&mut ctx, *kind, *n, *count, *top_entry),
    }
}

/// Applies the basis policy and, if requested, the collision perturbation.
fn prepare(cli: &Cli, sys: MeasurementSystem) -> CliResult<MeasurementSystem> {
    if sys.basis_class() == BasisClass::Orthonormal && !cli.allow_negative_basis {
        return Err(CliError::NegativeBasis);
    }
    match (check_configuration(&sys), cli.perturb_eps) {
        (Err(_), Some(eps)) if eps > 0.0 => {
            let p = perturb_basis(&sys, eps, cli.seed);
            check_configuration(&p)?;
            Ok(p)
        }
        _ => Ok(sys),
    }
}

fn load_system(cli: &Cli, matrix: Option<&Path>, basis: Option<&Path>) -> CliResult<Option<MeasurementSystem>> {
    let sys = match (matrix, basis) {
        (Some(p), _) => MeasurementSystem::decompose(&csvio::read_matrix(p)?)?,
        (None, Some(p)) => MeasurementSystem::from_orthonormal_basis(&csvio::read_matrix(p)?)?,
        (None, None) => return Ok(None),
    };
    prepare(cli, sys).map(Some)
}

fn load_network(path: &Path, sys: Option<&MeasurementSystem>) -> CliResult<NetworkSpec> {
    let net = NetworkSpec::from_json(&read_file(path)?)?;
    if let Some(sys) = sys {
        let h = basis_hash(sys);
        if h != net.meta.basis_hash {
            return Err(CliError::BasisMismatch {
                net: net.meta.basis_hash,
                matrix: h,
            });
        }
    }
    Ok(net)
}

/// The network to evaluate with, if any: a given document, or one compiled on demand.
fn network_for(cli: &Cli, path: Option<&Path>, sys: Option<&MeasurementSystem>) -> CliResult<Option<NetworkSpec>> {
    match (path, sys) {
        (Some(p), _) => load_network(p, sys).map(Some),
        (None, Some(s)) if cli.backend == Some(BackendKind::Network) => Ok(Some(compile(s)?)),
        _ => Ok(None),
    }
}

fn resolve_t(q: &Query, sys: Option<&MeasurementSystem>) -> CliResult<Vec<f64>> {
    match (&q.t, &q.y, sys) {
        (Some(t), _, _) => Ok(t.clone()),
        (None, Some(y), Some(s)) => Ok(s.equivalent_measurement(y)?),
        (None, Some(_), None) => Err(CliError::Usage("--y needs --matrix or --basis".into())),
        (None, None, _) => Err(CliError::Usage("give --t or --y".into())),
    }
}

fn require_system(sys: Option<MeasurementSystem>, what: &str) -> CliResult<MeasurementSystem> {
    sys.ok_or_else(|| CliError::Usage(format!("{what} needs --matrix or --basis")))
}

fn cmd_compile(ctx: &mut Ctx, matrix: &Path) -> CliResult<()> {
    let sys = prepare(ctx.cli, MeasurementSystem::decompose(&csvio::read_matrix(matrix)?)?)?;
    check_configuration(&sys)?;
    let net = compile(&sys)?;
    let st = net.stats();
    let text = format!(
        "N = {}, M = {}\nnodes per layer: {:?}\nbefore sharing: {:?}\ndedup ratio: {:.4}\nedges: {} (+{} head edges)\nN^M growth reference: {}\nperturbed: {}\n",
        net.n,
        net.m,
        st.nodes_per_layer,
        st.nodes_per_layer_before_dedup,
        st.dedup_ratio,
        st.edges,
        st.head_edges,
        st.worst_case_bound,
        sys.perturbation().is_some(),
    );
    if let Some(p) = &ctx.cli.out {
        write_file(p, &net.to_json())?;
    }
    ctx.print(&text)
}

#[derive(Serialize)]
struct Band {
    estimate: f64,
    stderr: f64,
    within_3sigma: bool,
}

fn band(analytic: f64, est: f64, se: f64) -> Band {
    Band {
        estimate: est,
        stderr: se,
        within_3sigma: (analytic - est).abs() <= 3.0 * se + 1e-12,
    }
}

fn cmd_vol(ctx: &mut Ctx, q: &Query) -> CliResult<()> {
    let sys = load_system(ctx.cli, q.matrix.as_deref(), q.basis.as_deref())?;
    let net = network_for(ctx.cli, q.net.as_deref(), sys.as_ref())?;
    let t = resolve_t(q, sys.as_ref())?;
    let vol = match (&net, &sys) {
        (Some(n), _) => n.forward(&t)?.evaluation.volume,
        (None, Some(s)) => evaluate_all(s, &t)?.volume,
        (None, None) => return Err(CliError::Usage("vol needs --matrix, --basis or --net".into())),
    };
    let volume = vol.to_f64();
    let mut out = json!({
        "t": t,
        "volume": volume,
        "log_volume": if vol.signum() > 0 { vol.ln_abs() } else { f64::NEG_INFINITY },
    });
    if q.oracle {
        let sys = require_system(sys, "--oracle")?;
        let mc = match mc_polytope(&sys, &t, ctx.cli.samples, ctx.cli.seed) {
            Ok(s) => band(volume, s.volume_est, s.volume_stderr),
            Err(CoreError::InfeasibleT) => band(volume, 0.0, 0.0),
            Err(e) => return Err(e.into()),
        };
        out["monte_carlo"] = serde_json::to_value(mc).expect("plain struct");
        if sys.m() == 1 {
            out["closed_form"] = json!(lasserre_slice_volume(&sys.v_s().column(0), t[0])?);
        }
    }
    ctx.print_json(&out)
}

fn cmd_centroid(ctx: &mut Ctx, q: &Query) -> CliResult<()> {
    let sys = require_system(load_system(ctx.cli, q.matrix.as_deref(), q.basis.as_deref())?, "centroid")?;
    let net = network_for(ctx.cli, q.net.as_deref(), Some(&sys))?;
    let t = resolve_t(q, Some(&sys))?;
    let backend = net.as_ref().map_or(Backend::Engine, Backend::Network);
    let r = centroid_estimate(&sys, &t, backend)?;
    let mut out = serde_json::to_value(&r).expect("plain struct");
    out["t"] = json!(t);
    if q.oracle {
        let s = mc_polytope(&sys, &t, ctx.cli.samples, ctx.cli.seed)?;
        let bands: Vec<Band> = (0..sys.n())
            .map(|i| band(r.x_hat[i], s.centroid_mean[i], s.centroid_stderr[i]))
            .collect();
        out["monte_carlo"] = serde_json::to_value(bands).expect("plain struct");
    }
    ctx.print_json(&out)
}

fn cmd_oracle(ctx: &mut Ctx, q: &Query) -> CliResult<()> {
    let sys = require_system(load_system(ctx.cli, q.matrix.as_deref(), q.basis.as_deref())?, "oracle")?;
    let t = resolve_t(q, Some(&sys))?;
    let s = mc_polytope(&sys, &t, ctx.cli.samples, ctx.cli.seed)?;
    ctx.print_json(&s)
}

fn cmd_estimate(
    ctx: &mut Ctx,
    matrix: &Path,
    net: Option<&Path>,
    y_file: Option<&Path>,
    t_file: Option<&Path>,
) -> CliResult<()> {
    let sys = prepare(ctx.cli, MeasurementSystem::decompose(&csvio::read_matrix(matrix)?)?)?;
    let net = network_for(ctx.cli, net, Some(&sys))?;
    let backend = net.as_ref().map_or(Backend::Engine, Backend::Network);
    let (rows, from_y) = match (y_file, t_file) {
        (Some(p), _) => (csvio::read_rows(p)?, true),
        (None, Some(p)) => (csvio::read_rows(p)?, false),
        (None, None) => return Err(CliError::Usage("give --y-file or --t-file".into())),
    };
    let n = sys.n();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string(), "status".into(), "log_volume".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["underflow", "clamped", "perturbed", "empirical_basis"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    for (i, row) in rows.iter().enumerate() {
        let t = if from_y { sys.equivalent_measurement(row)? } else { row.clone() };
        let mut rec = vec![i.to_string()];
        match centroid_estimate(&sys, &t, backend) {
            Ok(r) => {
                rec.push("ok".into());
                rec.push(r.log_volume.to_string());
                rec.extend(r.x_hat.iter().map(|x| x.to_string()));
                rec.extend([r.flags.underflow, r.flags.clamped, r.flags.perturbed, r.flags.empirical_basis].map(|b| b.to_string()));
            }
            Err(CoreError::EmptyPolytope) => {
                rec.push("empty".into());
                rec.push("-inf".into());
                rec.extend(std::iter::repeat_n(String::new(), n));
                let perturbed = sys.perturbation().is_some();
                let empirical = sys.basis_class() == BasisClass::Orthonormal;
                rec.extend([false, false, perturbed, empirical].map(|b| b.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
        w.write_record(&rec).expect("in-memory write");
    }
    let text = String::from_utf8(w.into_inner().expect("flush")).expect("ascii");
    ctx.emit(&text)
}

fn cmd_bench(ctx: &mut Ctx, b: &BenchArgs) -> CliResult<()> {
    let mut file = match &b.config {
        Some(p) => BenchFile::load(p)?,
        None => BenchFile::default(),
    };
    file.n = b.n.or(file.n);
    file.m_list = b.m_list.clone().or(file.m_list);
    file.ns = b.ns.or(file.ns);
    file.source = b.source.clone().or(file.source);
    file.top_entry = b.top_entry.or(file.top_entry);
    file.backend = ctx.cli.backend.or(file.backend);
    if file.seed.is_none() || ctx.cli.seed != 0 {
        file.seed = Some(ctx.cli.seed);
    }
    let cfg = BenchConfig::from_file(file)?;
    let report = run_bench(&cfg)?;
    ctx.emit(&report.to_csv(b.timings))
}

fn cmd_sample(ctx: &mut Ctx, kind: SampleKind, n: usize, count: usize, top_entry: Option<f64>) -> CliResult<()> {
    let seed = ctx.cli.seed;
    let rows = match kind {
        SampleKind::Uniform => {
            let mut rng = split(seed, 1);
            (0..count).map(|_| sample_uniform_simplex(n, &mut rng)).collect()
        }
        SampleKind::Peaked => {
            let top = top_entry.ok_or_else(|| CliError::Usage("peaked sampling needs --top-entry".into()))?;
            let g = PeakedDirichlet::calibrate(n + 1, top, &mut split(seed, 2))?;
            g.samples(count, &mut split(seed, 1))
        }
        SampleKind::Gaussian => gaussian_matrix(count, n, &mut split(seed, 0)).to_rows(),
    };
    ctx.emit(&csvio::format_rows(&rows))
}
