//! Command-line front end: `solve`, `sweep`, `verify`, `greens` and `appendix`.
//!
//! Exit codes: 0 success, 1 error, 2 a solve stopped without converging but
//! produced a result, 3 a sweep finished with failed points.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::appendix::{divergence_audit, embedding_constant, AscentOptions, DivergenceRow, EmbeddingReport};
use crate::domain::{scale_domain, DomainSpec};
use crate::energy::{check_exponent, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::greens::{regular_part_at, sup_regular_part, RegularBoundReport, RegularPartSample};
use crate::grid::build_grid;
use crate::io::FieldDump;
use crate::minimize::{minimize_constrained, Init, InitPreset, SolverOptions, Status};
use crate::report::Report;
use crate::scalar::Vec3;
use crate::sweeps::{config_hash, run_sweep, write_csvs, RecordStore, SweepConfig};
use crate::verify::{run_suite, Suite, SuiteOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STAGNATED: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "splab", version, about = "Mass-constrained Schrödinger–Poisson ground states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One constrained minimization on a fixed domain.
    Solve(SolveArgs),
    /// Parameter sweep over λ and ρ driven by a JSON config.
    Sweep(SweepArgs),
    /// Run the property suites and print a pass/fail table.
    Verify(VerifyArgs),
    /// Regular part of the Dirichlet Green's function of a domain.
    Greens(GreensArgs),
    /// Embedding constants and the small-mass threshold of a domain.
    Appendix(AppendixArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Gaussian,
    Eigen,
    Random,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Preset name (ball, box, annulus, torus), inline JSON or a JSON file.
    #[arg(long, default_value = "ball")]
    pub domain: String,
    #[arg(long, default_value_t = 2.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Dilation factor applied to the domain.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Cells per unit length.
    #[arg(long, default_value_t = 8.0)]
    pub resolution: f64,
    #[arg(long, value_enum, default_value_t = InitKind::Gaussian)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON config; defaults apply to omitted fields and to a missing file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite name or `all`.
    #[arg(long, default_value = "all")]
    pub suite: String,
    /// Coarser grids.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write the outcomes as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GreensArgs {
    #[arg(long, default_value = "ball")]
    pub domain: String,
    #[arg(long, default_value_t = 16.0)]
    pub resolution: f64,
    /// Depth at which `M(δ) = sup H(x,x)` is sampled.
    #[arg(long, default_value_t = 0.25)]
    pub delta: f64,
    /// Evaluate `H(x,y)` at these points, given as `x1,x2,x3`.
    #[arg(long, value_parser = parse_point, num_args = 2, value_names = ["X", "Y"])]
    pub pair: Option<Vec<Vec3<f64>>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AppendixArgs {
    #[arg(long, default_value = "ball")]
    pub domain: String,
    #[arg(long, default_value_t = 2.5)]
    pub p: f64,
    #[arg(long, default_value_t = 12.0)]
    pub resolution: f64,
    /// Dilations for the `C̃_{λD}` table, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_point(s: &str) -> std::result::Result<Vec3<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three coordinates, got {}", v.len()))
}

/// `ball`, `box`, `annulus`, `torus`, a JSON object or a path to one.
pub fn parse_domain(s: &str) -> Result<DomainSpec<f64>> {
    let spec = match s {
        "ball" => DomainSpec::ball([0.0; 3], 1.0)?,
        "box" => DomainSpec::cuboid([-2.0; 3], [2.0; 3])?,
        "annulus" => DomainSpec::annulus([0.0; 3], 1.0, 2.0)?,
        "torus" => DomainSpec::solid_torus(2.0, 0.5)?,
        _ => {
            let bytes = if s.trim_start().starts_with('{') {
                s.as_bytes().to_vec()
            } else {
                std::fs::read(s).map_err(|e| Error::Config(format!("domain: cannot read {s:?}: {e}")))?
            };
            let spec: DomainSpec<f64> = serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("domain: {e}")))?;
            spec.validate().map_err(|e| Error::Config(format!("domain: {e}")))?;
            spec
        }
    };
    Ok(spec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub started: u64,
    pub finished: Option<u64>,
    pub exit_status: Option<i32>,
    pub complete: bool,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

impl RunManifest {
    fn start(command: &str, config_hash: String, seed: Option<u64>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            seed,
            started: unix_now(),
            finished: None,
            exit_status: None,
            complete: false,
            files: Vec::new(),
        }
    }

    fn finish(&mut self, code: i32) {
        self.finished = Some(unix_now());
        self.exit_status = Some(code);
        self.complete = true;
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn with_pool<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Config(format!("workers: {e}")))?;
    Ok(pool.install(f))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Everything that determines a solve; stored as `config.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveConfig {
    pub domain: DomainSpec<f64>,
    pub p: f64,
    pub rho: f64,
    pub lambda: f64,
    pub resolution: f64,
    pub init: InitKind,
    pub seed: u64,
    pub solver: SolverOptions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub domain: String,
    pub p: f64,
    pub rho: f64,
    pub lambda: f64,
    pub h: f64,
    pub cells: usize,
    pub energy: EnergyBreakdown<f64>,
    pub omega: f64,
    /// Norm of `g − ωu` at the returned field.
    pub residual: f64,
    pub barycenter: Option<Vec3<f64>>,
    pub iterations: usize,
    pub status: Status,
    pub nonnegative: bool,
    pub min_value: f64,
    pub start: usize,
    pub field: String,
}

impl SolveArgs {
    pub fn config(&self) -> Result<SolveConfig> {
        let domain = parse_domain(&self.domain)?;
        check_exponent(self.p).map_err(|e| Error::Config(format!("p: {e}")))?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Config(format!("resolution must be positive, got {}", self.resolution)));
        }
        let mut solver = SolverOptions { seed: self.seed, restarts: self.restarts, ..SolverOptions::default() };
        if let Some(t) = self.grad_tol {
            solver.grad_tol = t;
        }
        if let Some(n) = self.max_iters {
            solver.max_iters = n;
        }
        solver.validate()?;
        Ok(SolveConfig { domain, p: self.p, rho: self.rho, lambda: self.lambda, resolution: self.resolution, init: self.init, seed: self.seed, solver })
    }
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let cfg = args.config()?;
    let spec = scale_domain(&cfg.domain, cfg.lambda)?;
    let grid = build_grid(&spec, cfg.resolution, 1)?;
    let init = match cfg.init {
        InitKind::Gaussian => InitPreset::default(),
        InitKind::Eigen => InitPreset::FirstEigenfield,
        InitKind::Random => InitPreset::RandomPositive { seed: cfg.seed },
    };
    info!("solving on {} with {} cells", spec.label(), grid.len());
    let res = minimize_constrained(&grid, cfg.p, cfg.rho, &Init::Preset(init), &cfg.solver)?;
    let dump = FieldDump::from_grid(&res.u, &grid)?;

    let config_bytes = serde_json::to_vec_pretty(&cfg)?;
    let mut manifest = RunManifest::start("solve", config_hash(&config_bytes), Some(cfg.seed));
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.json"), &config_bytes)?;
    manifest.files.push("config.json".into());
    manifest.write(&args.out)?;

    dump.save(&args.out.join("field.bin"))?;
    manifest.files.push("field.bin".into());
    let summary = SolveSummary {
        domain: spec.label(),
        p: cfg.p,
        rho: cfg.rho,
        lambda: cfg.lambda,
        h: grid.h,
        cells: grid.len(),
        energy: res.energy,
        omega: res.omega.omega,
        residual: res.omega.residual,
        barycenter: res.barycenter,
        iterations: res.iterations,
        status: res.status,
        nonnegative: res.nonnegative,
        min_value: res.min_value,
        start: res.start,
        field: "field.bin".into(),
    };
    write_json(&args.out.join("result.json"), &summary)?;
    manifest.files.push("result.json".into());
    println!(
        "{}: energy {:.8e}, omega {:.8e}, residual {:.2e}, {} iterations, {:?}",
        summary.domain, summary.energy.total, summary.omega, summary.residual, summary.iterations, summary.status
    );
    let code = if res.status == Status::Converged { EXIT_OK } else { EXIT_STAGNATED };
    manifest.files.push("manifest.json".into());
    manifest.finish(code);
    manifest.write(&args.out)?;
    Ok(code)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub m_delta: Option<f64>,
    pub failures: usize,
    pub reports: Vec<Report>,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let cfg = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("config: cannot read {}: {e}", path.display())))?;
            SweepConfig::from_json(&bytes)?
        }
        None => SweepConfig::default(),
    };
    cfg.validate()?;
    let config_bytes = cfg.canonical_json();
    let hash = config_hash(&config_bytes);
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.json"), &config_bytes)?;
    let mut manifest = RunManifest::start("sweep", hash.clone(), Some(cfg.solver.seed));
    manifest.files.push("config.json".into());
    manifest.files.push("records.jsonl".into());
    manifest.write(&args.out)?;

    let store = RecordStore::open(&args.out, &hash)?;
    if store.cached() > 0 {
        info!("resuming with {} cached records", store.cached());
    }
    let out = with_pool(args.workers, || run_sweep(&cfg, Some(&store)))??;
    for path in write_csvs(&out.records, &args.out)? {
        manifest.files.push(relative(&path, &args.out));
    }
    let report = SweepReport { config_hash: hash, m_delta: out.m_delta, failures: out.failures(), reports: out.reports.clone() };
    write_json(&args.out.join("report.json"), &report)?;
    manifest.files.push("report.json".into());
    for r in &out.reports {
        print!("{r}");
    }
    println!("{} records, {} resumed, {} failed", out.records.len(), out.resumed, out.failures());
    let code = if out.failures() > 0 { EXIT_PARTIAL } else { EXIT_OK };
    manifest.files.push("manifest.json".into());
    manifest.finish(code);
    manifest.write(&args.out)?;
    Ok(code)
}

fn relative(path: &Path, dir: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let suites: Vec<Suite> = if args.suite == "all" { Suite::ALL.to_vec() } else { vec![args.suite.parse()?] };
    let mut outcomes: Vec<SuiteOutcome> = Vec::new();
    let mut all_pass = true;
    for s in suites {
        let o = with_pool(args.workers, || run_suite(s, args.quick))?.map_err(|e| Error::Contract(format!("suite {s} failed to run: {e}")))?;
        print!("{}", o.report);
        println!("[{s}] {} rows, {} failed, {:.1} s", o.report.rows.len(), o.report.failures().count(), o.seconds);
        all_pass &= o.report.pass();
        outcomes.push(o);
    }
    if let Some(path) = &args.out {
        write_json(path, &outcomes)?;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_ERROR })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreensOutput {
    pub domain: String,
    pub h: f64,
    pub bound: RegularBoundReport<f64>,
    pub pair: Option<RegularPartSample<f64>>,
}

pub fn cmd_greens(args: &GreensArgs) -> Result<i32> {
    let spec = parse_domain(&args.domain)?;
    let grid = build_grid(&spec, args.resolution, 1)?;
    let bound = sup_regular_part(&grid, args.delta)?;
    let pair = match &args.pair {
        Some(xy) => Some(regular_part_at(&grid, xy[0], xy[1])?),
        None => None,
    };
    let out = GreensOutput { domain: spec.label(), h: grid.h, bound, pair };
    emit(&out, args.out.as_deref())?;
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AppendixOutput {
    pub domain: String,
    pub h: f64,
    pub embedding: EmbeddingReport<f64>,
    pub divergence: Vec<DivergenceRow<f64>>,
    pub report: Option<Report>,
}

pub fn cmd_appendix(args: &AppendixArgs) -> Result<i32> {
    let spec = parse_domain(&args.domain)?;
    check_exponent(args.p).map_err(|e| Error::Config(format!("p: {e}")))?;
    let grid = build_grid(&spec, args.resolution, 1)?;
    let opts = AscentOptions::default();
    let embedding = embedding_constant(&grid, args.p, &opts)?;
    let (divergence, report) = if args.lambdas.is_empty() {
        (Vec::new(), None)
    } else {
        let d = divergence_audit(&spec, &args.lambdas, args.p, args.resolution, 3.5, &opts)?;
        (d.rows, Some(d.report))
    };
    let out = AppendixOutput { domain: spec.label(), h: grid.h, embedding, divergence, report };
    emit(&out, args.out.as_deref())?;
    Ok(EXIT_OK)
}

fn emit<S: Serialize>(value: &S, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Greens(a) => cmd_greens(a),
        Command::Appendix(a) => cmd_appendix(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_inline_domains_parse() {
        assert_eq!(parse_domain("ball").unwrap(), DomainSpec::ball([0.0; 3], 1.0).unwrap());
        let d = parse_domain(r#"{"kind":"ball","center":[0,0,0],"radius":2}"#).unwrap();
        assert_eq!(d, DomainSpec::ball([0.0; 3], 2.0).unwrap());
        assert!(parse_domain(r#"{"kind":"ball","center":[0,0,0],"radius":-1}"#).is_err());
        assert!(parse_domain("{not json").is_err());
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("1, 2,3").unwrap(), [1.0, 2.0, 3.0]);
        assert!(parse_point("1,2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
