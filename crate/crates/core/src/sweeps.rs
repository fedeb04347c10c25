//! Parameter studies over the expansion factor `λ` and the mass `ρ`.
//!
//! Radial quantities (`c_∞`, `b*_λ`, `l(λ)`) are recomputed on every run;
//! they take milliseconds. Three-dimensional solves are stored in
//! `records.jsonl` keyed by the configuration hash and skipped on resume.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{region, scale_domain, DomainSpec};
use crate::elliptic::RadialField;
use crate::energy::{check_exponent, RadialPotential};
use crate::error::{Error, Result};
use crate::greens::sup_regular_part;
use crate::grid::{build_grid, cell_cap, Grid};
use crate::minimize::{
    minimize_constrained, minimize_with_barycenter, radial_minimize, spherical_average, support_radius, Init, InitPreset, PenaltySchedule,
    RadialProblem, RadialSolveResult, SolverOptions, Status,
};
use crate::report::{Report, ReportRow};
use crate::scalar::{dist3, Vec3};
use crate::topology::{barycenter, containment_audit, m_term, sublevel_threshold, transplant_audit, SublevelField, SublevelThreshold};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Whole-space level from the truncated radial solve.
    CInf,
    /// Radial ball level on `B_{λr}`.
    BStar,
    /// Three-dimensional ball level on `B_{λr}`.
    BLambda,
    /// Level on `λΩ`.
    CLambda,
    /// Sublevel threshold `l(λ)`.
    Level,
    /// Penalized barycenter-pinned annulus level.
    A,
    /// Transplant lattice audit on `λΩ`.
    Transplant,
}

impl Quantity {
    pub const ALL: [Quantity; 7] =
        [Quantity::CInf, Quantity::BStar, Quantity::BLambda, Quantity::CLambda, Quantity::Level, Quantity::A, Quantity::Transplant];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::CInf => "c_inf",
            Quantity::BStar => "b_star",
            Quantity::BLambda => "b_lambda",
            Quantity::CLambda => "c_lambda",
            Quantity::Level => "level",
            Quantity::A => "a",
            Quantity::Transplant => "transplant",
        }
    }

    fn is_3d(self) -> bool {
        matches!(self, Quantity::BLambda | Quantity::CLambda | Quantity::A | Quantity::Transplant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Base domain `Ω`; must contain `B_r(0)`.
    pub omega: DomainSpec<f64>,
    pub r: f64,
    /// Outer radius of the annuli; must exceed `diam Ω`.
    pub big_r: f64,
    pub p: f64,
    pub rho: Vec<f64>,
    /// Expansion factors of the three-dimensional solves.
    pub lambda: Vec<f64>,
    /// Expansion factors of the radial ball solves.
    pub radial_lambda: Vec<f64>,
    /// Expansion factors of the annulus solves.
    pub annulus_lambda: Vec<f64>,
    pub cells_per_unit: f64,
    pub annulus_cells_per_unit: f64,
    /// Radial mesh spacing (at least 512 intervals are always used).
    pub radial_h: f64,
    /// First truncation radius of the whole-space solve.
    pub c_inf_radius: f64,
    /// Margin `δ` at which `M_{B_r}(δ)` is evaluated.
    pub margin: f64,
    pub margin_cells_per_unit: f64,
    pub quantities: Vec<Quantity>,
    pub solver: SolverOptions,
    pub penalty: PenaltySchedule,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            omega: DomainSpec::cuboid([-2.0; 3], [2.0; 3]).expect("valid box"),
            r: 1.0,
            big_r: 8.0,
            p: 2.5,
            rho: vec![0.25, 0.5, 1.0],
            lambda: vec![1.0, 2.0, 4.0, 8.0],
            radial_lambda: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            annulus_lambda: vec![1.0, 2.0, 4.0],
            cells_per_unit: 2.0,
            annulus_cells_per_unit: 1.0,
            radial_h: 0.125,
            c_inf_radius: 64.0,
            margin: 0.25,
            margin_cells_per_unit: 16.0,
            quantities: Quantity::ALL.to_vec(),
            solver: SolverOptions::default(),
            penalty: PenaltySchedule::default(),
        }
    }
}

impl SweepConfig {
    /// Smaller grids and lists for quick runs.
    pub fn quick() -> Self {
        Self {
            rho: vec![0.5],
            lambda: vec![1.0, 2.0, 4.0],
            annulus_lambda: vec![1.0, 2.0],
            margin_cells_per_unit: 12.0,
            ..Self::default()
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let c: Self = serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("sweep config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        check_exponent(self.p)?;
        self.omega.validate()?;
        self.solver.validate()?;
        if !(self.r > 0.0) {
            return cfg(format!("r must be positive, got {}", self.r));
        }
        if !self.omega.contains([0.0; 3]) {
            return cfg("omega must contain the origin".into());
        }
        if self.omega.signed_distance([0.0; 3]) > -self.r {
            return cfg(format!("B_r(0) with r = {} is not inside omega", self.r));
        }
        if !(self.big_r > self.omega.diameter()) {
            return cfg(format!("big_r = {} must exceed diam omega = {}", self.big_r, self.omega.diameter()));
        }
        if self.rho.is_empty() || self.rho.iter().any(|&r| !(r > 0.0)) {
            return cfg("rho list must be nonempty and positive".into());
        }
        for (name, list) in [("lambda", &self.lambda), ("radial_lambda", &self.radial_lambda), ("annulus_lambda", &self.annulus_lambda)] {
            if list.iter().any(|&l| !(l >= 1.0)) {
                return cfg(format!("{name} entries must be >= 1"));
            }
            if list.windows(2).any(|w| !(w[1] > w[0])) {
                return cfg(format!("{name} must be strictly increasing"));
            }
        }
        for (name, v) in [
            ("cells_per_unit", self.cells_per_unit),
            ("annulus_cells_per_unit", self.annulus_cells_per_unit),
            ("radial_h", self.radial_h),
            ("c_inf_radius", self.c_inf_radius),
            ("margin", self.margin),
            ("margin_cells_per_unit", self.margin_cells_per_unit),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be positive, got {v}"));
            }
        }
        if self.margin >= self.r {
            return cfg(format!("margin {} must be below r = {}", self.margin, self.r));
        }
        if self.quantities.is_empty() {
            return cfg("quantities must not be empty".into());
        }
        let cap = cell_cap() as f64;
        let largest = |list: &[f64]| list.last().copied();
        if let Some(l) = largest(&self.lambda) {
            let (lo, hi) = self.omega.bounding_box();
            let ext = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max) * l;
            if ext * self.cells_per_unit + 2.0 > cap {
                return Err(Error::Resource(format!("largest grid on omega x {l} needs {:.0} cells per axis (cap {cap})", ext * self.cells_per_unit)));
            }
        }
        if let Some(l) = largest(&self.annulus_lambda) {
            let ext = 2.0 * self.big_r * l;
            if ext * self.annulus_cells_per_unit + 2.0 > cap {
                return Err(Error::Resource(format!("largest annulus x {l} needs {:.0} cells per axis (cap {cap})", ext * self.annulus_cells_per_unit)));
            }
        }
        Ok(())
    }

    pub fn wants(&self, q: Quantity) -> bool {
        self.quantities.contains(&q)
    }

    /// Canonical serialization used for hashing.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("config serializes")
    }
}

/// Hex SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub quantity: Quantity,
    pub lambda: Option<f64>,
    pub rho: f64,
    pub p: f64,
    pub value: Option<f64>,
    pub omega: Option<f64>,
    /// `value − c_∞`.
    pub gap: Option<f64>,
    pub iterations: usize,
    /// Grid or radial mesh spacing.
    pub h: f64,
    pub status: Option<Status>,
    pub nonnegative: Option<bool>,
    /// Barycenter of the field inside the `λr`-neighbourhood of `λΩ`.
    pub contained: Option<bool>,
    /// Barycenter constraint met (annulus) or all transplant checks passed.
    pub constraint_met: Option<bool>,
    /// Relative L² gap between the recentred spherical average and `w_∞`.
    pub profile_gap: Option<f64>,
    /// Barycenter violation (annulus) or worst transplant offset.
    pub offset: Option<f64>,
    /// Relative change of `c_∞` between the two truncation radii.
    pub drift: Option<f64>,
    /// `M ρ⁴ / 4` entering `l(λ)`.
    pub m_term: Option<f64>,
    pub beta: Option<[f64; 3]>,
    pub error: Option<String>,
}

impl SweepRecord {
    fn new(quantity: Quantity, lambda: Option<f64>, rho: f64, p: f64) -> Self {
        Self {
            quantity,
            lambda,
            rho,
            p,
            value: None,
            omega: None,
            gap: None,
            iterations: 0,
            h: 0.0,
            status: None,
            nonnegative: None,
            contained: None,
            constraint_met: None,
            profile_gap: None,
            offset: None,
            drift: None,
            m_term: None,
            beta: None,
            error: None,
        }
    }

    fn failed(mut self, e: &Error) -> Self {
        self.error = Some(e.to_string());
        self
    }

    pub fn flagged(&self) -> bool {
        self.error.is_some() || self.status == Some(Status::Stagnated)
    }

    fn key(&self) -> RecordKey {
        RecordKey { quantity: self.quantity, lambda: self.lambda.map(f64::to_bits), rho: self.rho.to_bits() }
    }

    fn order(a: &Self, b: &Self) -> std::cmp::Ordering {
        let l = |r: &Self| r.lambda.unwrap_or(f64::NEG_INFINITY);
        l(a).total_cmp(&l(b)).then(a.rho.total_cmp(&b.rho)).then(a.quantity.cmp(&b.quantity))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct RecordKey {
    quantity: Quantity,
    lambda: Option<u64>,
    rho: u64,
}

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    config_hash: String,
    record: SweepRecord,
}

/// Append-only record log used to resume interrupted sweeps.
pub struct RecordStore {
    path: PathBuf,
    hash: String,
    cached: HashMap<RecordKey, SweepRecord>,
    file: Mutex<File>,
}

impl RecordStore {
    /// Opens `dir/records.jsonl`, keeping successful records of `hash`.
    pub fn open(dir: &Path, hash: &str) -> Result<Self> {
        let path = dir.join("records.jsonl");
        let mut cached = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                match serde_json::from_str::<StoredRecord>(&line) {
                    Ok(s) if s.config_hash == hash && s.record.error.is_none() => {
                        cached.insert(s.record.key(), s.record);
                    }
                    Ok(_) => {}
                    Err(e) => warn!("ignoring unreadable record line: {e}"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, hash: hash.to_string(), cached, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn cached(&self) -> usize {
        self.cached.len()
    }

    fn get(&self, key: &RecordKey) -> Option<SweepRecord> {
        self.cached.get(key).cloned()
    }

    fn append(&self, record: &SweepRecord) -> Result<()> {
        let line = serde_json::to_string(&StoredRecord { config_hash: self.hash.clone(), record: record.clone() })?;
        let mut f = self.file.lock().expect("record log lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }
}

/// Radial results shared by the three-dimensional work items of one `ρ`.
struct RadialStage {
    rho: f64,
    w_inf: RadialSolveResult<f64>,
    c_inf: f64,
    b_star: Vec<(f64, RadialSolveResult<f64>)>,
    levels: Vec<(f64, SublevelThreshold<f64>)>,
}

impl RadialStage {
    fn ball(&self, lambda: f64) -> Option<&RadialSolveResult<f64>> {
        self.b_star.iter().find(|(l, _)| *l == lambda).map(|(_, r)| r)
    }

    fn level(&self, lambda: f64) -> Option<&SublevelThreshold<f64>> {
        self.levels.iter().find(|(l, _)| *l == lambda).map(|(_, t)| t)
    }
}

fn intervals_for(outer: f64, h: f64) -> usize {
    ((outer / h).ceil() as usize).max(512)
}

fn radial_record(q: Quantity, lambda: Option<f64>, rho: f64, p: f64, r: &RadialSolveResult<f64>) -> SweepRecord {
    let mut rec = SweepRecord::new(q, lambda, rho, p);
    rec.value = Some(r.energy.total);
    rec.omega = Some(r.omega.omega);
    rec.iterations = r.iterations;
    rec.h = r.u.h;
    rec.status = Some(r.status);
    rec.nonnegative = Some(r.nonnegative);
    rec
}

/// `c_∞` and `w_∞`: solve at the configured radius, then at twice the
/// support radius of that solution.
pub fn whole_space(p: f64, rho: f64, radius: f64, h: f64, opts: &SolverOptions) -> Result<(RadialSolveResult<f64>, f64)> {
    let first = radial_minimize(&RadialProblem::new(radius, intervals_for(radius, h), p, rho, RadialPotential::Newton), None, opts)?;
    let outer = 2.0 * support_radius(&first.u, 1e-8);
    let second = radial_minimize(&RadialProblem::new(outer, intervals_for(outer, h), p, rho, RadialPotential::Newton), None, opts)?;
    let drift = ((second.energy.total - first.energy.total) / second.energy.total).abs();
    Ok((second, drift))
}

fn radial_stage(cfg: &SweepConfig, rho: f64, m_delta: Option<f64>, out: &mut Vec<SweepRecord>) -> Result<RadialStage> {
    let p = cfg.p;
    let (w_inf, drift) = whole_space(p, rho, cfg.c_inf_radius, cfg.radial_h, &cfg.solver)?;
    let c_inf = w_inf.energy.total;
    if cfg.wants(Quantity::CInf) {
        let mut rec = radial_record(Quantity::CInf, None, rho, p, &w_inf);
        rec.drift = Some(drift);
        out.push(rec);
    }
    let mut lams: Vec<f64> = cfg.radial_lambda.iter().chain(&cfg.lambda).copied().collect();
    lams.sort_by(f64::total_cmp);
    lams.dedup();
    let mut b_star = Vec::new();
    for &l in &lams {
        let a = l * cfg.r;
        let res = radial_minimize(&RadialProblem::new(a, intervals_for(a, cfg.radial_h), p, rho, RadialPotential::Dirichlet), None, &cfg.solver);
        match res {
            Ok(r) => {
                if cfg.wants(Quantity::BStar) && cfg.radial_lambda.contains(&l) {
                    let mut rec = radial_record(Quantity::BStar, Some(l), rho, p, &r);
                    rec.gap = Some(r.energy.total - c_inf);
                    out.push(rec);
                }
                b_star.push((l, r));
            }
            Err(e) => {
                warn!("radial ball solve failed at lambda {l}, rho {rho}: {e}");
                out.push(SweepRecord::new(Quantity::BStar, Some(l), rho, p).failed(&e));
            }
        }
    }
    let mut levels = Vec::new();
    if let Some(m) = m_delta {
        let mt = m_term(m, rho);
        for &l in cfg.lambda.iter().filter(|&&l| l > 1.0) {
            let Some((_, b)) = b_star.iter().find(|(x, _)| *x == l) else { continue };
            let t = sublevel_threshold(b.energy.total, l, mt, cfg.margin)?;
            if cfg.wants(Quantity::Level) {
                let mut rec = SweepRecord::new(Quantity::Level, Some(l), rho, p);
                rec.value = Some(t.level);
                rec.gap = Some(t.level - c_inf);
                rec.m_term = Some(mt);
                out.push(rec);
            }
            levels.push((l, t));
        }
    }
    Ok(RadialStage { rho, w_inf, c_inf, b_star, levels })
}

/// Relative L² distance between the spherical average of `u` about `center`
/// and the radial profile `w`.
pub fn profile_gap(u: &crate::grid::ScalarField<f64>, grid: &Grid<f64>, center: Vec3<f64>, w: &RadialField<f64>) -> f64 {
    let avg = spherical_average(u, grid, center, w);
    let wts = w.volume_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..wts.len() {
        let d = avg.values[j] - w.values[j];
        num += wts[j] * d * d;
        den += wts[j] * w.values[j] * w.values[j];
    }
    (num / den).sqrt()
}

fn radial_init(grid: &Grid<f64>, w: &RadialField<f64>, center: Vec3<f64>) -> Init<f64> {
    Init::Field(grid.sample(|x| {
        let r = dist3(x, center);
        if r >= w.outer {
            0.0
        } else {
            w.eval(r)
        }
    }))
}

#[derive(Clone, Copy, Debug)]
struct WorkItem {
    quantity: Quantity,
    lambda: f64,
    rho_index: usize,
}

fn run_item(cfg: &SweepConfig, item: WorkItem, stage: &RadialStage) -> Result<SweepRecord> {
    let (p, rho, lam) = (cfg.p, stage.rho, item.lambda);
    let mut rec = SweepRecord::new(item.quantity, Some(lam), rho, p);
    match item.quantity {
        Quantity::BLambda => {
            let spec = DomainSpec::ball([0.0; 3], lam * cfg.r)?;
            let grid = build_grid(&spec, cfg.cells_per_unit, 1)?;
            let init = match stage.ball(lam) {
                Some(b) => radial_init(&grid, &b.u, [0.0; 3]),
                None => Init::Preset(InitPreset::default()),
            };
            let r = minimize_constrained(&grid, p, rho, &init, &cfg.solver)?;
            fill_solve(&mut rec, &r, grid.h, stage.c_inf);
        }
        Quantity::CLambda => {
            let spec = scale_domain(&cfg.omega, lam)?;
            let grid = build_grid(&spec, cfg.cells_per_unit, 1)?;
            let init = match stage.ball(lam) {
                Some(b) => radial_init(&grid, &b.u, [0.0; 3]),
                None => Init::Preset(InitPreset::default()),
            };
            let r = minimize_constrained(&grid, p, rho, &init, &cfg.solver)?;
            fill_solve(&mut rec, &r, grid.h, stage.c_inf);
            let beta = barycenter(&r.u, &grid)?.beta;
            rec.beta = Some(beta);
            rec.profile_gap = Some(profile_gap(&r.u, &grid, beta, &stage.w_inf.u));
            if let Some(t) = stage.level(lam) {
                let outer = region(&spec, lam * cfg.r)?;
                let field = SublevelField { label: "minimizer".into(), energy: r.energy.total, beta };
                let c = containment_audit(&[field], t.level, &outer, 2.0 * grid.h);
                rec.contained = c.verdicts[0].contained;
            }
        }
        Quantity::A => {
            let spec = scale_domain(&DomainSpec::annulus([0.0; 3], cfg.r, cfg.big_r)?, lam)?;
            let grid = build_grid(&spec, cfg.annulus_cells_per_unit, 1)?;
            let init = Init::Preset(InitPreset::RandomPositive { seed: cfg.solver.seed });
            let s = minimize_with_barycenter(&grid, p, rho, [0.0; 3], &init, &cfg.penalty, &cfg.solver)?;
            fill_solve(&mut rec, &s.result, grid.h, stage.c_inf);
            rec.offset = Some(s.violation);
            rec.constraint_met = Some(s.constraint_met);
            rec.beta = s.result.barycenter;
        }
        Quantity::Transplant => {
            let (Some(b), Some(t)) = (stage.ball(lam), stage.level(lam)) else {
                return Err(Error::Contract(format!("transplant audit at lambda {lam} needs b* and l(lambda)")));
            };
            let spec = scale_domain(&cfg.omega, lam)?;
            let grid = build_grid(&spec, cfg.cells_per_unit, 1)?;
            let a = transplant_audit(&b.u, &grid, &spec, cfg.r, lam, t, p, rho, None)?;
            rec.value = Some(a.worst_energy.energy);
            rec.gap = Some(a.worst_energy.energy - stage.c_inf);
            rec.h = grid.h;
            rec.iterations = a.evaluated;
            rec.offset = Some(a.worst_offset.offset);
            rec.contained = Some(a.containment.pass());
            rec.constraint_met = Some(a.report.pass());
        }
        q => return Err(Error::Contract(format!("{} is not a grid quantity", q.name()))),
    }
    Ok(rec)
}

fn fill_solve(rec: &mut SweepRecord, r: &crate::minimize::SolveResult<f64>, h: f64, c_inf: f64) {
    rec.value = Some(r.energy.total);
    rec.omega = Some(r.omega.omega);
    rec.gap = Some(r.energy.total - c_inf);
    rec.iterations = r.iterations;
    rec.h = h;
    rec.status = Some(r.status);
    rec.nonnegative = Some(r.nonnegative);
    if rec.beta.is_none() {
        rec.beta = r.barycenter;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    /// `M_{B_r}(δ)` used for `l(λ)`.
    pub m_delta: Option<f64>,
    pub reports: Vec<Report>,
    /// Records reused from an earlier run.
    pub resumed: usize,
}

impl SweepOutput {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Runs every requested quantity; individual failures become flagged records.
/// Work runs on the current rayon pool and the output order is
/// `(λ, ρ, quantity)` regardless of scheduling.
pub fn run_sweep(cfg: &SweepConfig, store: Option<&RecordStore>) -> Result<SweepOutput> {
    cfg.validate()?;
    let needs_level = cfg.wants(Quantity::Level) || cfg.wants(Quantity::Transplant) || cfg.wants(Quantity::CLambda);
    let m_delta = if needs_level && cfg.lambda.iter().any(|&l| l > 1.0) {
        let ball = DomainSpec::ball([0.0; 3], cfg.r)?;
        let grid = build_grid(&ball, cfg.margin_cells_per_unit, 1)?;
        let m = sup_regular_part(&grid, cfg.margin)?;
        info!("M(delta = {}) = {:.6} on {}", cfg.margin, m.m_delta, ball.label());
        Some(m.m_delta)
    } else {
        None
    };
    let mut records = Vec::new();
    let mut stages = Vec::new();
    for &rho in &cfg.rho {
        stages.push(radial_stage(cfg, rho, m_delta, &mut records)?);
    }
    let mut items = Vec::new();
    for (k, _) in cfg.rho.iter().enumerate() {
        for &q in Quantity::ALL.iter().filter(|q| q.is_3d() && cfg.wants(**q)) {
            let lams: &[f64] = if q == Quantity::A { &cfg.annulus_lambda } else { &cfg.lambda };
            for &l in lams {
                if q == Quantity::Transplant && l <= 1.0 {
                    continue;
                }
                items.push(WorkItem { quantity: q, lambda: l, rho_index: k });
            }
        }
    }
    let mut resumed = 0;
    let mut todo = Vec::new();
    for it in items {
        let key = RecordKey { quantity: it.quantity, lambda: Some(it.lambda.to_bits()), rho: cfg.rho[it.rho_index].to_bits() };
        match store.and_then(|s| s.get(&key)) {
            Some(r) => {
                resumed += 1;
                records.push(r);
            }
            None => todo.push(it),
        }
    }
    // largest problems first so the pool drains evenly
    todo.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    let done: Vec<Result<SweepRecord>> = todo
        .par_iter()
        .map(|&it| {
            let stage = &stages[it.rho_index];
            let t = std::time::Instant::now();
            let rec = match run_item(cfg, it, stage) {
                Ok(r) => r,
                Err(e) => {
                    warn!("{} at lambda {}, rho {} failed: {e}", it.quantity.name(), it.lambda, stage.rho);
                    SweepRecord::new(it.quantity, Some(it.lambda), stage.rho, cfg.p).failed(&e)
                }
            };
            info!("{} lambda {} rho {} done in {:.1?}", it.quantity.name(), it.lambda, stage.rho, t.elapsed());
            if let Some(s) = store {
                s.append(&rec)?;
            }
            Ok(rec)
        })
        .collect();
    for r in done {
        records.push(r?);
    }
    records.sort_by(SweepRecord::order);
    let mut reports = Vec::new();
    for &rho in &cfg.rho {
        reports.push(convergence_report(&records, rho, cfg)?);
    }
    Ok(SweepOutput { records, m_delta, reports, resumed })
}

fn pick<'a>(records: &'a [SweepRecord], q: Quantity, rho: f64) -> Vec<&'a SweepRecord> {
    records.iter().filter(|r| r.quantity == q && r.rho == rho && r.value.is_some()).collect()
}

/// Limit statements for one `ρ`: behaviour of `ω` and the energy at the
/// largest `λ`, decay of the `b*_λ` gaps, the strict annulus gap, the
/// ordering and inequality chain at each `λ`, and the sublevel audits.
pub fn convergence_report(records: &[SweepRecord], rho: f64, cfg: &SweepConfig) -> Result<Report> {
    let c_inf_rec = records
        .iter()
        .find(|r| r.quantity == Quantity::CInf && r.rho == rho && r.value.is_some())
        .ok_or_else(|| Error::Contract(format!("no whole-space record for rho = {rho}")))?;
    let c_inf = c_inf_rec.value.unwrap();
    let omega_inf = c_inf_rec.omega.unwrap_or(f64::NAN);
    let dom = cfg.omega.label();
    let tag = |s: &str| format!("{s} (rho={rho})");
    let mut rep = Report::new("sweep");
    rep.push(ReportRow::at_most(&tag("c_inf negative"), "space", None, c_inf, 0.0, 0.0));
    rep.push(ReportRow::at_most(&tag("omega_inf negative"), "space", None, omega_inf, 0.0, 0.0));
    if let Some(d) = c_inf_rec.drift {
        rep.push(ReportRow::at_most(&tag("c_inf truncation drift"), "space", None, d, 0.01, 0.0));
    }
    let c_lam = pick(records, Quantity::CLambda, rho);
    if let Some(last) = c_lam.last() {
        let l = last.lambda;
        let om = last.omega.unwrap_or(f64::NAN);
        rep.push(ReportRow::at_most(&tag("omega < 0 at largest lambda"), &dom, l, om, 0.0, 0.0));
        rep.push(
            ReportRow::relative(&tag("omega close to omega_inf at largest lambda"), &dom, l, om, omega_inf, 0.10)
                .with_note("tolerance is an artifact choice"),
        );
        rep.push(ReportRow::at_most(&tag("energy < 0 at largest lambda"), &dom, l, last.value.unwrap(), 0.0, 0.0));
        let some = c_lam.iter().filter(|r| r.lambda.map_or(false, |x| x > 1.0));
        for r in some {
            if let Some(c) = r.contained {
                rep.push(ReportRow::flag(&tag("minimizer barycenter contained"), &dom, r.lambda, c));
            }
        }
    }
    for w in c_lam.windows(2) {
        if let (Some(a), Some(b)) = (w[0].profile_gap, w[1].profile_gap) {
            rep.push(ReportRow::at_most(&tag("recentred profile gap decreasing"), &dom, w[1].lambda, b, a, 0.0));
        }
    }
    let b_star = pick(records, Quantity::BStar, rho);
    for w in b_star.windows(2) {
        rep.push(ReportRow::at_most(&tag("b* gap decreasing"), "radial ball", w[1].lambda, w[1].gap.unwrap().abs(), w[0].gap.unwrap().abs(), 0.0));
    }
    if let Some(last) = b_star.last() {
        rep.push(ReportRow::at_most(&tag("b* < 0 at largest lambda"), "radial ball", last.lambda, last.value.unwrap(), 0.0, 0.0));
        rep.push(ReportRow::relative(&tag("b* close to c_inf at largest lambda"), "radial ball", last.lambda, last.value.unwrap(), c_inf, 0.05));
    }
    for a in pick(records, Quantity::A, rho) {
        rep.push(
            ReportRow::at_least(&tag("annulus level above c_inf"), "annulus", a.lambda, a.gap.unwrap(), 0.1 * c_inf.abs(), 0.0)
                .with_note(format!("penalized upper bound; tolerance is an artifact choice; barycenter met: {:?}", a.constraint_met)),
        );
    }
    let level = pick(records, Quantity::Level, rho);
    let b_lam = pick(records, Quantity::BLambda, rho);
    let find = |v: &[&SweepRecord], l: Option<f64>| v.iter().find(|r| r.lambda == l).and_then(|r| r.value);
    let b_star_at = |l: f64| {
        records
            .iter()
            .find(|r| r.quantity == Quantity::BStar && r.rho == rho && r.lambda == Some(l))
            .and_then(|r| r.value)
    };
    for r in &b_lam {
        if let Some(bs) = b_star_at(r.lambda.unwrap()) {
            rep.push(ReportRow::at_most(&tag("b_lambda <= b* + 2%"), "ball", r.lambda, r.value.unwrap(), bs + 0.02 * bs.abs(), 0.0));
        }
    }
    for lv in &level {
        let l = lv.lambda.unwrap();
        let mt = lv.m_term.unwrap_or(0.0);
        let c = find(&c_lam, lv.lambda);
        if let (Some(c), Some(b)) = (c, find(&b_lam, lv.lambda)) {
            rep.push(ReportRow::at_most(&tag("c_lambda <= b_lambda + (1 + M term)/lambda"), &dom, Some(l), c, b + (1.0 + mt) / l, 0.0));
        }
        if let Some(c) = c {
            rep.push(ReportRow::at_most(&tag("sublevel nonempty"), &dom, Some(l), c, lv.value.unwrap(), 0.0));
        }
        let mut cands: Vec<f64> = [c, find(&pick(records, Quantity::A, rho), lv.lambda)].into_iter().flatten().collect();
        if let Some(bs) = b_star_at(l) {
            cands.push(bs);
        }
        if let Some(m) = cands.into_iter().reduce(f64::min) {
            rep.push(
                ReportRow::at_least(&tag("c_inf <= min level + M term/lambda"), &dom, Some(l), m + mt / l, c_inf, 0.02 * c_inf.abs())
                    .with_note("slack 2% of |c_inf| is an artifact choice"),
            );
        }
    }
    for t in pick(records, Quantity::Transplant, rho) {
        let ok = t.constraint_met.unwrap_or(false);
        rep.push(ReportRow::flag(&tag("transplant audit"), &dom, t.lambda, ok).with_note(format!("worst offset {:.3e}", t.offset.unwrap_or(f64::NAN))));
    }
    let sublevel = [tag("transplant audit"), tag("minimizer barycenter contained"), tag("sublevel nonempty")];
    let audited = |l: f64| rep.rows.iter().filter(|row| row.lambda == Some(l) && sublevel.contains(&row.property)).collect::<Vec<_>>();
    let swept: Vec<f64> = cfg.lambda.iter().copied().filter(|&l| l > 1.0 && !audited(l).is_empty()).collect();
    let passing = |l: f64| audited(l).iter().all(|row| row.pass);
    if !swept.is_empty() {
        let threshold = (0..swept.len()).find(|&k| swept[k..].iter().all(|&l| passing(l))).map(|k| swept[k]);
        let note = match threshold {
            Some(l) => format!("empirical Lambda = {l}"),
            None => "sublevel audits fail at the largest lambda".into(),
        };
        rep.push(ReportRow::flag(&tag("sublevel audits pass from some swept lambda on"), &dom, threshold, threshold.is_some()).with_note(note));
    }
    for r in records.iter().filter(|r| r.rho == rho && r.error.is_some()) {
        rep.push(ReportRow::flag(&tag(&format!("{} computed", r.quantity.name())), &dom, r.lambda, false).with_note(r.error.clone().unwrap()));
    }
    Ok(rep)
}

const CSV_HEADER: [&str; 20] = [
    "quantity",
    "lambda",
    "rho",
    "p",
    "value",
    "omega",
    "gap",
    "iterations",
    "h",
    "status",
    "nonnegative",
    "contained",
    "constraint_met",
    "profile_gap",
    "offset",
    "drift",
    "m_term",
    "beta_x",
    "beta_y",
    "beta_z",
];

fn csv_row(r: &SweepRecord) -> Vec<String> {
    let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let b = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
    let beta = |a: usize| f(r.beta.map(|v| v[a]));
    vec![
        r.quantity.name().to_string(),
        f(r.lambda),
        format!("{:e}", r.rho),
        format!("{:e}", r.p),
        f(r.value),
        f(r.omega),
        f(r.gap),
        r.iterations.to_string(),
        format!("{:e}", r.h),
        r.status.map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_string()).unwrap_or_else(|| if r.error.is_some() { "error".into() } else { String::new() }),
        b(r.nonnegative),
        b(r.contained),
        b(r.constraint_met),
        f(r.profile_gap),
        f(r.offset),
        f(r.drift),
        f(r.m_term),
        beta(0),
        beta(1),
        beta(2),
    ]
}

/// Writes one CSV per quantity present in `records`; returns the paths.
pub fn write_csvs(records: &[SweepRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for q in Quantity::ALL {
        let rows: Vec<&SweepRecord> = records.iter().filter(|r| r.quantity == q).collect();
        if rows.is_empty() {
            continue;
        }
        let path = dir.join(format!("{}.csv", q.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(CSV_HEADER)?;
        for r in rows {
            w.write_record(csv_row(r))?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepConfig {
        SweepConfig {
            rho: vec![0.5],
            lambda: vec![1.0, 2.0],
            radial_lambda: vec![4.0, 8.0],
            annulus_lambda: vec![1.0],
            cells_per_unit: 2.0,
            annulus_cells_per_unit: 1.0,
            margin: 0.5,
            margin_cells_per_unit: 6.0,
            quantities: vec![Quantity::CInf, Quantity::BStar, Quantity::Level, Quantity::CLambda],
            ..SweepConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = SweepConfig::default();
        c.validate().unwrap();
        let back = SweepConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(config_hash(&c.canonical_json()), config_hash(&back.canonical_json()));
        SweepConfig::quick().validate().unwrap();
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let e = SweepConfig::from_json(br#"{"big_r": 5.0}"#).unwrap_err().to_string();
        assert!(e.contains("big_r"), "{e}");
        let e = SweepConfig::from_json(br#"{"lambda": [2.0, 1.0]}"#).unwrap_err().to_string();
        assert!(e.contains("lambda"), "{e}");
        let e = SweepConfig::from_json(br#"{"rh0": [1.0]}"#).unwrap_err().to_string();
        assert!(e.contains("rh0"), "{e}");
        let e = SweepConfig::from_json(br#"{"r": 3.0}"#).unwrap_err().to_string();
        assert!(e.contains("B_r"), "{e}");
    }

    #[test]
    fn tiny_sweep_is_ordered_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let hash = config_hash(&cfg.canonical_json());
        let store = RecordStore::open(dir.path(), &hash).unwrap();
        let first = run_sweep(&cfg, Some(&store)).unwrap();
        assert_eq!(first.failures(), 0);
        assert_eq!(first.resumed, 0);
        let mut sorted = first.records.clone();
        sorted.sort_by(SweepRecord::order);
        assert_eq!(sorted, first.records);
        drop(store);
        let store = RecordStore::open(dir.path(), &hash).unwrap();
        assert_eq!(store.cached(), 2);
        let second = run_sweep(&cfg, Some(&store)).unwrap();
        assert_eq!(second.resumed, 2);
        assert_eq!(second.records, first.records);
        let other = RecordStore::open(dir.path(), "different").unwrap();
        assert_eq!(other.cached(), 0);
        let paths = write_csvs(&first.records, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
    }
}
