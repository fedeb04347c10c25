//! Mass-constrained minimization on the sphere `∫u² = ρ²`.
//!
//! The search direction is the Sobolev-preconditioned tangential gradient,
//! combined across iterations by Polak–Ribière+ conjugation, and every trial
//! point is retracted onto the sphere by rescaling. Steps are accepted by
//! Armijo backtracking on the objective.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{first_eigenvalue, RadialField};
use crate::energy::{lagrange, EnergyBreakdown, Evaluation, Functional, GridFunctional, MultiplierEstimate, RadialFunctional, RadialPotential};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::scalar::{dist3, norm3, sub3, Real, Vec3};
use crate::topology::{barycenter, barycenter_gradient};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the L² norm of the tangential gradient is at most this.
    pub grad_tol: f64,
    /// First trial step.
    pub step0: f64,
    /// Armijo sufficient-decrease factor `c₁`.
    pub armijo: f64,
    /// Step reduction per backtrack.
    pub backtrack: f64,
    /// Number of starts; starts after the first use seeded random fields.
    pub restarts: usize,
    pub seed: u64,
    /// Shift `σ` of the Sobolev preconditioner.
    pub precond_shift: f64,
    /// Steps below this are treated as a failed line search.
    pub min_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-6,
            step0: 1.0,
            armijo: 1e-4,
            backtrack: 0.5,
            restarts: 1,
            seed: 0,
            precond_shift: 0.05,
            min_step: 1e-14,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Err(Error::Config(format!("solver option {name} is invalid: {v}")));
        if self.max_iters == 0 {
            return bad("max_iters", 0.0);
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol", self.grad_tol);
        }
        if !(self.step0 > 0.0) {
            return bad("step0", self.step0);
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("armijo", self.armijo);
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack", self.backtrack);
        }
        if self.restarts == 0 {
            return bad("restarts", 0.0);
        }
        if !(self.precond_shift > 0.0) {
            return bad("precond_shift", self.precond_shift);
        }
        if !(self.min_step > 0.0) {
            return bad("min_step", self.min_step);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    /// Iteration cap reached above the tolerance.
    MaxIters,
    /// Line search failed after at least one accepted step.
    Stagnated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
    /// `|∫u² − ρ²| / ρ²` of the accepted iterate.
    pub mass_defect: f64,
}

/// Outcome of one descent run on a [`Functional`].
#[derive(Clone, Debug)]
pub struct Descent<T: Real> {
    pub u: Vec<T>,
    pub eval: Evaluation<T>,
    /// Multiplier of the objective's gradient at the final iterate.
    pub multiplier: MultiplierEstimate<T>,
    pub iterations: usize,
    pub status: Status,
    pub history: Vec<IterationRecord>,
}

/// `ρ u / |u|_{L²}` with respect to the quadrature `weights`.
pub fn project_mass_weighted<T: Real>(u: &mut [T], weights: &[T], rho: T) -> Result<()> {
    let mass: T = weights.iter().zip(u.iter()).map(|(&m, &v)| m * v * v).sum();
    if !(mass > T::zero()) || !mass.is_finite() {
        return Err(Error::Contract("cannot project a zero (or non-finite) field onto the mass sphere".into()));
    }
    let s = rho / mass.sqrt();
    u.iter_mut().for_each(|v| *v *= s);
    Ok(())
}

/// Rescales a grid field to `∫u² = ρ²`.
pub fn project_mass<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, rho: T) -> Result<ScalarField<T>> {
    u.check(grid)?;
    if !(rho > T::zero()) {
        return Err(Error::Domain(format!("mass radius must be positive, got {rho}")));
    }
    let mut v = u.values.clone();
    project_mass_weighted(&mut v, &vec![grid.cell_volume(); grid.len()], rho)?;
    Ok(ScalarField::new(v))
}

/// Consecutive steps accepted only at the round-off floor before giving up.
const FLOOR_PATIENCE: usize = 50;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Runs the constrained descent from `u0` (projected onto the sphere first).
pub fn descend<T: Real, F: Functional<T>>(f: &mut F, u0: Vec<T>, rho: T, opts: &SolverOptions) -> Result<Descent<T>> {
    opts.validate()?;
    if !(rho > T::zero()) {
        return Err(Error::Domain(format!("mass radius must be positive, got {rho}")));
    }
    let n = f.len();
    if u0.len() != n {
        return Err(Error::Contract(format!("initial field has {} values, expected {n}", u0.len())));
    }
    let m = f.weights().to_vec();
    let rho2 = rho * rho;
    let mut u = u0;
    f.constrain(&mut u);
    project_mass_weighted(&mut u, &m, rho)?;
    let mut g = vec![T::zero(); n];
    let mut eval = f.evaluate(&u, Some(&mut g))?;

    let tol = T::lit(opts.grad_tol);
    let c1 = T::lit(opts.armijo);
    let shrink = T::lit(opts.backtrack);
    let min_step = T::lit(opts.min_step);
    let noise = T::epsilon() * T::lit(100.0);
    let mut step = T::lit(opts.step0);
    let mut history = Vec::new();

    let mut z = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    let mut mu_ = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut gv = vec![T::zero(); n];
    let mut prev: Option<(Vec<T>, Vec<T>)> = None; // (tangent residual, preconditioned residual)
    let mut status = Status::MaxIters;
    let mut iterations = 0;
    let mut floor_steps = 0;

    for it in 0..opts.max_iters {
        let mult = lagrange(&m, &u, &g)?;
        if mult.residual <= tol {
            status = Status::Converged;
            break;
        }
        iterations = it + 1;
        // r = g − ω M u is the tangential residual in nodal form
        let r: Vec<T> = (0..n).map(|i| g[i] - mult.omega * m[i] * u[i]).collect();
        for i in 0..n {
            mu_[i] = m[i] * u[i];
        }
        // P r and P g differ by a multiple of P M u, which the projection
        // removes; r keeps the inner solve relative to the residual's scale
        f.precondition(&r, &mut z)?;
        f.precondition(&mu_, &mut y)?;
        let yy = dot(&mu_, &y);
        let a = dot(&mu_, &z) / yy;
        for i in 0..n {
            z[i] -= a * y[i];
        }
        let mut beta = T::zero();
        if let Some((r_prev, z_prev)) = &prev {
            let num: T = (0..n).map(|i| r[i] * (z[i] - z_prev[i])).sum();
            let den = dot(r_prev, z_prev);
            if den > T::zero() {
                beta = (num / den).max(T::zero());
            }
        }
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
        if beta > T::zero() {
            let a = dot(&mu_, &d) / yy;
            for i in 0..n {
                d[i] -= a * y[i];
            }
        }
        // first-order decrease along the retracted path
        let mut slope = dot(&r, &d);
        if !(slope > T::zero()) {
            d.copy_from_slice(&z);
            slope = dot(&r, &d);
        }
        if !(slope > T::zero()) {
            // the preconditioned residual carries no descent information
            status = Status::Stagnated;
            iterations = it;
            break;
        }
        let mut accepted = None;
        // below this predicted decrease the objective is dominated by round-off
        let floor = noise * eval.objective.abs().max(T::min_positive_value());
        while step >= min_step {
            for i in 0..n {
                v[i] = u[i] - step * d[i];
            }
            f.constrain(&mut v);
            project_mass_weighted(&mut v, &m, rho)?;
            let e = f.evaluate(&v, Some(&mut gv))?;
            if e.objective.is_finite() {
                let predicted = c1 * step * slope;
                if step * slope > floor {
                    if e.objective <= eval.objective - predicted {
                        floor_steps = 0;
                        accepted = Some(e);
                        break;
                    }
                } else if e.objective <= eval.objective && lagrange(&m, &v, &gv)?.residual < mult.residual {
                    // at the round-off floor only a residual decrease counts as progress
                    floor_steps += 1;
                    accepted = Some(e);
                    break;
                }
            }
            step *= shrink;
        }
        let Some(e) = accepted else {
            if it == 0 {
                return Err(Error::Stagnation {
                    iteration: 0,
                    gradient_norm: mult.residual.as_f64(),
                    energy: eval.objective.as_f64(),
                    iterate: u.iter().map(|x| x.as_f64()).collect(),
                });
            }
            warn!("line search failed at iteration {it} with residual {:.3e}", mult.residual.as_f64());
            status = Status::Stagnated;
            iterations = it;
            // restore the last accepted state
            f.evaluate(&u, Some(&mut g))?;
            break;
        };
        if floor_steps > FLOOR_PATIENCE {
            debug!("residual stuck at the round-off floor {:.3e}", mult.residual.as_f64());
            status = Status::Stagnated;
            iterations = it;
            f.evaluate(&u, Some(&mut g))?;
            break;
        }
        std::mem::swap(&mut u, &mut v);
        std::mem::swap(&mut g, &mut gv);
        eval = e;
        let mass = dot(&m, &u.iter().map(|&x| x * x).collect::<Vec<_>>());
        history.push(IterationRecord {
            objective: eval.objective.as_f64(),
            residual: mult.residual.as_f64(),
            step: step.as_f64(),
            mass_defect: ((mass - rho2) / rho2).abs().as_f64(),
        });
        prev = Some((r, z.clone()));
        step = (step * T::lit(1.5)).min(T::lit(1e8));
    }
    let multiplier = lagrange(&m, &u, &g)?;
    if status == Status::MaxIters && multiplier.residual <= tol {
        status = Status::Converged;
    }
    debug!("descent finished: {status:?} after {iterations} iterations, residual {:.3e}", multiplier.residual.as_f64());
    Ok(Descent { u, eval, multiplier, iterations, status, history })
}

/// Initial fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitPreset {
    /// `exp(−|x−c|²/(2 width²))`; defaults to the domain centre and a quarter
    /// of the inradius.
    Gaussian {
        #[serde(default)]
        center: Option<[f64; 3]>,
        #[serde(default)]
        width: Option<f64>,
    },
    FirstEigenfield,
    /// Sum of seeded positive Gaussian bumps inside the domain.
    RandomPositive { seed: u64 },
}

impl Default for InitPreset {
    fn default() -> Self {
        InitPreset::Gaussian { center: None, width: None }
    }
}

/// Initial guess for [`minimize_constrained`].
#[derive(Clone, Debug)]
pub enum Init<T: Real> {
    Preset(InitPreset),
    Field(ScalarField<T>),
}

impl<T: Real> From<InitPreset> for Init<T> {
    fn from(p: InitPreset) -> Self {
        Init::Preset(p)
    }
}

pub fn gaussian<T: Real>(grid: &Grid<T>, center: Vec3<T>, width: T) -> ScalarField<T> {
    let two_w2 = T::lit(2.0) * width * width;
    grid.sample(|x| {
        let r = dist3(x, center);
        (-(r * r) / two_w2).exp()
    })
}

pub fn random_positive<T: Real>(grid: &Grid<T>, seed: u64) -> ScalarField<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = &grid.spec;
    let inr = spec.inradius().as_f64();
    let (lo, hi) = spec.bounding_box();
    let mut bumps = Vec::new();
    let mut tries = 0;
    while bumps.len() < 4 && tries < 10_000 {
        tries += 1;
        let c: Vec3<T> = std::array::from_fn(|a| T::lit(rng.gen_range(lo[a].as_f64()..hi[a].as_f64())));
        if grid.depth(c).as_f64() < 0.2 * inr {
            continue;
        }
        let width = T::lit(rng.gen_range(0.1..0.3) * inr);
        let amp = T::lit(rng.gen_range(0.5..1.5));
        bumps.push((c, width, amp));
    }
    if bumps.is_empty() {
        bumps.push((spec.center(), T::lit(0.25 * inr), T::one()));
    }
    grid.sample(|x| {
        bumps
            .iter()
            .map(|&(c, w, a)| {
                let r = dist3(x, c);
                a * (-(r * r) / (T::lit(2.0) * w * w)).exp()
            })
            .sum()
    })
}

pub fn initial_field<T: Real>(grid: &Grid<T>, init: &Init<T>) -> Result<ScalarField<T>> {
    match init {
        Init::Field(f) => {
            f.check(grid)?;
            Ok(f.clone())
        }
        Init::Preset(InitPreset::Gaussian { center, width }) => {
            let c = center.map(|c| c.map(T::lit)).unwrap_or_else(|| grid.spec.center());
            let w = width.map(T::lit).unwrap_or_else(|| grid.spec.inradius() / T::lit(4.0));
            if !(w > T::zero()) {
                return Err(Error::Config(format!("gaussian width must be positive, got {w}")));
            }
            Ok(gaussian(grid, c, w))
        }
        Init::Preset(InitPreset::FirstEigenfield) => Ok(first_eigenvalue(grid, T::lit(1e-6).max(T::epsilon() * T::lit(1e3)))?.1),
        Init::Preset(InitPreset::RandomPositive { seed }) => Ok(random_positive(grid, *seed)),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult<T: Real> {
    pub u: ScalarField<T>,
    pub energy: EnergyBreakdown<T>,
    pub omega: MultiplierEstimate<T>,
    /// `None` when the field has no kinetic mass.
    pub barycenter: Option<Vec3<T>>,
    pub iterations: usize,
    /// Final L² norm of the tangential gradient.
    pub gradient_norm: T,
    pub min_value: T,
    /// `min u ≥ −1e−8 · max|u|`.
    pub nonnegative: bool,
    pub status: Status,
    pub rho: T,
    /// Index of the start that produced this result.
    pub start: usize,
    pub history: Vec<IterationRecord>,
}

fn finish_grid<T: Real>(grid: &Grid<T>, rho: T, start: usize, run: Descent<T>) -> SolveResult<T> {
    let u = ScalarField::new(run.u);
    let min_value = u.min();
    let scale = u.values.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    SolveResult {
        energy: run.eval.energy,
        omega: run.multiplier,
        barycenter: barycenter(&u, grid).ok().map(|b| b.beta),
        iterations: run.iterations,
        gradient_norm: run.multiplier.residual,
        min_value,
        nonnegative: min_value >= -T::lit(1e-8) * scale,
        status: run.status,
        rho,
        start,
        history: run.history,
        u,
    }
}

/// Minimizes `I(·;D)` over `∫u² = ρ²` on the grid's domain.
///
/// Start 0 uses `init`; further starts use seeded random positive fields with
/// seeds `opts.seed + k`. The result with the lowest energy is returned (ties
/// go to the earliest start).
pub fn minimize_constrained<T: Real>(
    grid: &Grid<T>,
    p: T,
    rho: T,
    init: &Init<T>,
    opts: &SolverOptions,
) -> Result<SolveResult<T>> {
    opts.validate()?;
    let starts: Vec<usize> = (0..opts.restarts).collect();
    let results: Vec<Result<SolveResult<T>>> = starts
        .par_iter()
        .map(|&k| {
            let u0 = if k == 0 {
                initial_field(grid, init)?
            } else {
                random_positive(grid, opts.seed.wrapping_add(k as u64))
            };
            let mut f = GridFunctional::new(grid, p)?.with_shift(T::lit(opts.precond_shift));
            let run = descend(&mut f, u0.values, rho, opts)?;
            Ok(finish_grid(grid, rho, k, run))
        })
        .collect();
    pick_best(results)
}

fn pick_best<T: Real>(results: Vec<Result<SolveResult<T>>>) -> Result<SolveResult<T>> {
    let mut best: Option<SolveResult<T>> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(r) => {
                if best.as_ref().map_or(true, |b| r.energy.total < b.energy.total) {
                    best = Some(r);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap())
}

/// `I + μ|β(u) − target|²` on a grid.
struct Penalized<'g, T: Real> {
    inner: GridFunctional<'g, T>,
    target: Vec3<T>,
    mu: T,
    scratch: Vec<T>,
}

impl<T: Real> Functional<T> for Penalized<'_, T> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn weights(&self) -> &[T] {
        self.inner.weights()
    }

    fn evaluate(&mut self, u: &[T], grad: Option<&mut [T]>) -> Result<Evaluation<T>> {
        let mut e = self.inner.evaluate(u, grad.is_some().then_some(&mut self.scratch[..]))?;
        let (beta, jac) = barycenter_gradient(self.inner.grid, u)?;
        let off = sub3(beta, self.target);
        e.objective += self.mu * (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]);
        if let Some(g) = grad {
            let two_mu = T::lit(2.0) * self.mu;
            for i in 0..u.len() {
                g[i] = self.scratch[i] + two_mu * (off[0] * jac[0][i] + off[1] * jac[1][i] + off[2] * jac[2][i]);
            }
        }
        Ok(e)
    }

    fn precondition(&mut self, v: &[T], out: &mut [T]) -> Result<()> {
        self.inner.precondition(v, out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySchedule {
    pub mu0: f64,
    /// Growth factor per stage.
    pub factor: f64,
    pub stages: usize,
    /// Iteration cap per stage, on top of `SolverOptions::max_iters`.
    pub stage_iters: usize,
    /// Accepted distance `|β − target|`; `None` means the grid spacing.
    pub tolerance: Option<f64>,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self { mu0: 1e-4, factor: 10.0, stages: 5, stage_iters: 400, tolerance: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarycenterSolve<T: Real> {
    /// Result with the unpenalized energy (the upper-bound estimate).
    pub result: SolveResult<T>,
    pub penalized_energy: T,
    pub mu: T,
    pub stages: usize,
    /// `|β(u) − target|` at the final iterate.
    pub violation: T,
    pub constraint_met: bool,
}

/// Minimizes `I + μ_k|β(u) − target|²` over `∫u² = ρ²` with `μ_k` growing
/// geometrically until `|β − target|` is within tolerance.
pub fn minimize_with_barycenter<T: Real>(
    grid: &Grid<T>,
    p: T,
    rho: T,
    target: Vec3<T>,
    init: &Init<T>,
    schedule: &PenaltySchedule,
    opts: &SolverOptions,
) -> Result<BarycenterSolve<T>> {
    opts.validate()?;
    if !(schedule.mu0 > 0.0 && schedule.factor > 1.0 && schedule.stages > 0 && schedule.stage_iters > 0) {
        return Err(Error::Config("penalty schedule needs mu0 > 0, factor > 1, at least one stage and stage_iters > 0".into()));
    }
    if !grid.spec.contains(target) && grid.spec.signed_distance(target) > grid.spec.diameter() {
        return Err(Error::Domain("barycenter target is far outside the domain".into()));
    }
    let tol = schedule.tolerance.map(T::lit).unwrap_or(grid.h);
    let stage_opts = SolverOptions { max_iters: opts.max_iters.min(schedule.stage_iters), ..opts.clone() };
    let mut u = initial_field(grid, init)?.values;
    let mut mu = T::lit(schedule.mu0);
    let mut last = None;
    let mut stages = 0;
    for k in 0..schedule.stages {
        stages = k + 1;
        let mut f = Penalized {
            inner: GridFunctional::new(grid, p)?.with_shift(T::lit(opts.precond_shift)),
            target,
            mu,
            scratch: vec![T::zero(); grid.len()],
        };
        let run = descend(&mut f, u, rho, &stage_opts)?;
        u = run.u.clone();
        let beta = barycenter(&ScalarField::new(u.clone()), grid)?.beta;
        let violation = dist3(beta, target);
        last = Some((run, violation, mu));
        if violation <= tol {
            break;
        }
        mu *= T::lit(schedule.factor);
    }
    let (run, violation, mu) = last.expect("at least one stage");
    let penalized_energy = run.eval.objective;
    // unpenalized energy, multiplier and residual at the final iterate
    let mut plain = GridFunctional::new(grid, p)?;
    let mut g = vec![T::zero(); grid.len()];
    let eval = plain.evaluate(&run.u, Some(&mut g))?;
    let multiplier = lagrange(plain.weights(), &run.u, &g)?;
    let plain_run = Descent { u: run.u, eval, multiplier, iterations: run.iterations, status: run.status, history: run.history };
    let result = finish_grid(grid, rho, 0, plain_run);
    Ok(BarycenterSolve { result, penalized_energy, mu, stages, violation, constraint_met: violation <= tol })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialSolveResult<T: Real> {
    pub u: RadialField<T>,
    pub energy: EnergyBreakdown<T>,
    pub omega: MultiplierEstimate<T>,
    pub iterations: usize,
    pub gradient_norm: T,
    pub nonnegative: bool,
    pub status: Status,
    pub rho: T,
    pub potential: RadialPotential,
    pub nonlocal_weight: T,
}

/// Radial problem description for [`radial_minimize`].
#[derive(Clone, Copy, Debug)]
pub struct RadialProblem<T: Real> {
    pub outer: T,
    pub intervals: usize,
    pub p: T,
    pub rho: T,
    pub potential: RadialPotential,
    pub nonlocal_weight: T,
}

impl<T: Real> RadialProblem<T> {
    pub fn new(outer: T, intervals: usize, p: T, rho: T, potential: RadialPotential) -> Self {
        Self { outer, intervals, p, rho, potential, nonlocal_weight: T::one() }
    }
}

/// Minimizes over radial fields on `B_a` (`u(a) = 0`), either with the
/// Dirichlet potential of `B_a` or with the Newton potential.
pub fn radial_minimize<T: Real>(problem: &RadialProblem<T>, init: Option<&RadialField<T>>, opts: &SolverOptions) -> Result<RadialSolveResult<T>> {
    if problem.intervals < 512 {
        return Err(Error::Contract(format!("radial mesh needs at least 512 intervals, got {}", problem.intervals)));
    }
    if !(problem.outer > T::zero()) {
        return Err(Error::Domain(format!("outer radius must be positive, got {}", problem.outer)));
    }
    let mut f = RadialFunctional::new(problem.outer, problem.intervals, problem.p, problem.potential)?
        .with_nonlocal_weight(problem.nonlocal_weight)
        .with_shift(T::lit(opts.precond_shift));
    let mesh = RadialField::from_fn(problem.outer, problem.intervals, |_| T::zero())?;
    let u0 = match init {
        Some(u) => {
            if u.values.len() != mesh.values.len() {
                return Err(Error::Contract("radial initial field has the wrong mesh".into()));
            }
            u.values.clone()
        }
        None => {
            let width = problem.outer.min(T::lit(30.0)) / T::lit(6.0);
            (0..mesh.values.len())
                .map(|j| {
                    let r = mesh.radius(j);
                    (-(r * r) / (T::lit(2.0) * width * width)).exp()
                })
                .collect()
        }
    };
    let run = descend(&mut f, u0, problem.rho, opts)?;
    let min = run.u.iter().fold(T::infinity(), |a, &b| a.min(b));
    let scale = run.u.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    Ok(RadialSolveResult {
        u: mesh.with_values(run.u),
        energy: run.eval.energy,
        omega: run.multiplier,
        iterations: run.iterations,
        gradient_norm: run.multiplier.residual,
        nonnegative: min >= -T::lit(1e-8) * scale,
        status: run.status,
        rho: problem.rho,
        potential: problem.potential,
        nonlocal_weight: problem.nonlocal_weight,
    })
}

/// Radius beyond which `|u| < threshold · max|u|`.
pub fn support_radius<T: Real>(u: &RadialField<T>, threshold: T) -> T {
    let max = u.values.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let cut = threshold * max;
    let last = u.values.iter().rposition(|&v| v.abs() >= cut).unwrap_or(0);
    u.radius(last)
}

/// Spherical average of a grid field about `center`, on the radial mesh of
/// `like` (zero beyond the sampled range).
pub fn spherical_average<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, center: Vec3<T>, like: &RadialField<T>) -> RadialField<T> {
    let n = like.values.len();
    let mut sum = vec![T::zero(); n];
    let mut cnt = vec![0usize; n];
    for m in 0..grid.len() {
        let r = norm3(sub3(grid.center(m), center));
        let j = (r / like.h).round().to_usize().unwrap_or(usize::MAX);
        if j < n {
            sum[j] += u.values[m];
            cnt[j] += 1;
        }
    }
    let mut values = vec![T::zero(); n];
    let mut last = T::zero();
    for j in 0..n {
        if cnt[j] > 0 {
            last = sum[j] / T::from_usize_lossy(cnt[j]);
            values[j] = last;
        } else if j > 0 {
            // shells thinner than the grid spacing carry the previous value
            values[j] = last;
        }
    }
    like.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::grid::build_grid;

    fn ball(r: f64, cpu: f64) -> Grid<f64> {
        build_grid(&DomainSpec::<f64>::ball([0.0; 3], r).unwrap(), cpu, 1).unwrap()
    }

    #[test]
    fn projection_scales_and_is_idempotent() {
        let g = ball(1.0, 6.0);
        let u = g.sample(|x| 1.0 + x[0]);
        let m = u.mass(&g);
        let v = project_mass(&u.scaled(2.0 / m.sqrt()), &g, 1.0).unwrap();
        assert!((v.mass(&g) - 1.0).abs() < 1e-14);
        let w = project_mass(&v, &g, 1.0).unwrap();
        for (a, b) in v.values.iter().zip(&w.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
        assert!(project_mass(&g.zeros(), &g, 1.0).is_err());
    }

    #[test]
    fn converges_on_small_ball() {
        let g = ball(2.0, 6.0);
        let opts = SolverOptions { grad_tol: 1e-7, ..Default::default() };
        let r = minimize_constrained(&g, 2.5, 0.5, &Init::Preset(InitPreset::default()), &opts).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!(r.omega.residual <= 10.0 * opts.grad_tol);
        assert!(r.nonnegative);
        assert!((r.energy.mass / 0.25 - 1.0).abs() < 1e-10);
        assert!(r.history.iter().all(|h| h.mass_defect < 1e-10));
        assert!(r.history.windows(2).all(|w| w[1].objective <= w[0].objective));
        let again = minimize_constrained(&g, 2.5, 0.5, &Init::Preset(InitPreset::default()), &opts).unwrap();
        assert_eq!(r.u.values, again.u.values);
    }

    #[test]
    fn radial_minimizer_of_small_ball_is_eigen_dominated() {
        // the power term is a relative correction of order ρ^{p−2}
        let rho = 1e-3;
        let prob = RadialProblem::new(1.0, 512, 2.5, rho, RadialPotential::Dirichlet);
        let r = radial_minimize(&prob, None, &SolverOptions { grad_tol: 1e-9, ..Default::default() }).unwrap();
        assert_eq!(r.status, Status::Converged);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((r.energy.total / (rho * rho * pi2 / 2.0) - 1.0).abs() < 0.01);
        assert!((r.omega.omega / pi2 - 1.0).abs() < 0.01);
    }

    #[test]
    fn radial_rejects_coarse_mesh() {
        let prob = RadialProblem::new(1.0, 100, 2.5, 0.5, RadialPotential::Dirichlet);
        assert!(matches!(radial_minimize(&prob, None, &SolverOptions::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn symmetric_start_keeps_the_barycenter() {
        let g = ball(2.0, 5.0);
        let res = minimize_with_barycenter(
            &g,
            2.5,
            0.5,
            [0.0; 3],
            &Init::Preset(InitPreset::default()),
            &PenaltySchedule::default(),
            &SolverOptions { grad_tol: 1e-6, ..Default::default() },
        )
        .unwrap();
        assert!(res.constraint_met);
        assert_eq!(res.stages, 1);
        assert!(res.violation < 1e-8);
    }
}
