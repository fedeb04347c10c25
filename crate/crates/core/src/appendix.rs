//! Embedding constant `C_D = sup |u|_{L^q} / ‖u‖_{H¹}` with `q = 4/(4−p)`,
//! the derived threshold `ρ_D`, the small-mass positivity bound and the
//! growth of `C̃_{λD}` under dilation.
//!
//! The `H¹(D)` norm carries no boundary condition: only links between
//! masked cells enter its gradient term. Any discrete field gives a lower
//! bound on `C_D`, so `C_D` is a one-sided estimate and `ρ_D` an upper one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{scale_domain, DomainSpec};
use crate::elliptic::{conjugate_gradient, first_eigenvalue};
use crate::energy::check_exponent;
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, ScalarField, OUTSIDE};
use crate::minimize::{minimize_constrained, Init, InitPreset, SolverOptions};
use crate::report::{Report, ReportRow};
use crate::scalar::{dist3, Real, Vec3};

/// `q = 4/(4−p)`
pub fn embedding_exponent<T: Real>(p: T) -> T {
    T::lit(4.0) / (T::lit(4.0) - p)
}

/// Applies `−Δ_N + I` (Neumann links only) to `u`.
fn apply_h1<T: Real>(grid: &Grid<T>, u: &[T], out: &mut [T]) {
    let inv_h2 = T::one() / (grid.h * grid.h);
    for m in 0..grid.len() {
        let mut s = T::zero();
        for &n in grid.neighbors(m) {
            if n != OUTSIDE {
                s += u[m] - u[n as usize];
            }
        }
        out[m] = s * inv_h2 + u[m];
    }
}

/// `‖u‖²_{H¹} = ∫|∇u|² + ∫u²` with Neumann links.
pub fn h1_norm_sq<T: Real>(grid: &Grid<T>, u: &[T]) -> T {
    let mut grad = T::zero();
    for m in 0..grid.len() {
        let nb = grid.neighbors(m);
        for d in [1, 3, 5] {
            if nb[d] != OUTSIDE {
                let diff = u[m] - u[nb[d] as usize];
                grad += diff * diff;
            }
        }
    }
    grad * grid.h + u.iter().map(|&v| v * v).sum::<T>() * grid.cell_volume()
}

pub fn lq_norm<T: Real>(grid: &Grid<T>, u: &[T], q: T) -> T {
    (u.iter().map(|&v| v.abs().powf(q)).sum::<T>() * grid.cell_volume()).powf(T::one() / q)
}

/// `|u|_{L^q} / ‖u‖_{H¹}`
pub fn quotient<T: Real>(grid: &Grid<T>, u: &[T], p: T) -> T {
    lq_norm(grid, u, embedding_exponent(p)) / h1_norm_sq(grid, u).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentOptions {
    pub max_iters: usize,
    /// Stop when the quotient changes by less than this, relatively.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { max_iters: 300, rel_tol: 1e-9, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport<T: Real> {
    pub p: T,
    /// Best quotient found (a lower bound on the supremum).
    pub c_d: T,
    pub mu1: T,
    /// `C_D² (1 + 1/μ₁)`
    pub c_tilde: T,
    /// `(p / (4 C̃_D))^{1/(p−2)}`, an upper-bound estimate.
    pub rho_d: T,
    /// Quotient reached by each start.
    pub starts: Vec<(String, T)>,
    /// False when some start hit the iteration cap.
    pub converged: bool,
}

/// `ρ_D = (p/(4 C̃))^{1/(p−2)}`
pub fn rho_threshold<T: Real>(c_tilde: T, p: T) -> T {
    (p / (T::lit(4.0) * c_tilde)).powf(T::one() / (p - T::lit(2.0)))
}

/// Fixed-point ascent `u ← A⁻¹(|u|^{q−2}u)` normalized in `H¹`, where
/// `A = −Δ_N + I`; the quotient is nondecreasing along the iteration.
fn ascend<T: Real>(grid: &Grid<T>, p: T, mut u: Vec<T>, opts: &AscentOptions) -> Result<(T, bool)> {
    let q = embedding_exponent(p);
    let n = grid.len();
    let normalize = |u: &mut Vec<T>| {
        let s = h1_norm_sq(grid, u).sqrt();
        u.iter_mut().for_each(|v| *v /= s);
    };
    normalize(&mut u);
    let inv_h2 = T::one() / (grid.h * grid.h);
    let diag_inv: Vec<T> = (0..n)
        .map(|m| {
            let links = grid.neighbors(m).iter().filter(|&&k| k != OUTSIDE).count();
            T::one() / (T::from_usize_lossy(links) * inv_h2 + T::one())
        })
        .collect();
    let mut best = quotient(grid, &u, p);
    let mut rhs = vec![T::zero(); n];
    let mut next = u.clone();
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(100.0));
    for _ in 0..opts.max_iters {
        for i in 0..n {
            rhs[i] = u[i].abs().powf(q - T::lit(2.0)) * u[i];
        }
        conjugate_gradient(|x, y| apply_h1(grid, x, y), &diag_inv, &rhs, &mut next, tol, 10 * n.max(100))?;
        normalize(&mut next);
        let qn = quotient(grid, &next, p);
        std::mem::swap(&mut u, &mut next);
        let done = (qn - best).abs() <= T::lit(opts.rel_tol) * best;
        best = best.max(qn);
        if done {
            return Ok((best, true));
        }
    }
    Ok((best, false))
}

fn bump<T: Real>(grid: &Grid<T>, c: Vec3<T>, width: T) -> Vec<T> {
    (0..grid.len())
        .map(|m| {
            let r = dist3(grid.center(m), c);
            (-(r * r) / (T::lit(2.0) * width * width)).exp()
        })
        .collect()
}

/// Starting fields: the constant, a centred bump, a bump on the boundary and
/// a seeded random positive field.
fn starts<T: Real>(grid: &Grid<T>, seed: u64) -> Vec<(String, Vec<T>)> {
    let spec = &grid.spec;
    let c = spec.center();
    let inr = spec.inradius();
    let w = (inr / T::lit(3.0)).max(T::lit(2.0) * grid.h);
    // boundary cell farthest from the centre along +x
    let edge = (0..grid.len())
        .filter(|&m| grid.boundary[m])
        .max_by(|&a, &b| {
            let (xa, xb) = (grid.center(a)[0], grid.center(b)[0]);
            xa.partial_cmp(&xb).unwrap().then(b.cmp(&a))
        })
        .map(|m| grid.center(m))
        .unwrap_or(c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random: Vec<T> = (0..grid.len()).map(|_| T::lit(rng.gen_range(0.5..1.5))).collect();
    vec![
        ("constant".to_string(), vec![T::one(); grid.len()]),
        ("center bump".to_string(), bump(grid, c, w)),
        ("boundary bump".to_string(), bump(grid, edge, w)),
        ("random".to_string(), random),
    ]
}

pub fn embedding_constant<T: Real>(grid: &Grid<T>, p: T, opts: &AscentOptions) -> Result<EmbeddingReport<T>> {
    check_exponent(p)?;
    let runs: Vec<(String, Result<(T, bool)>)> = starts(grid, opts.seed)
        .into_par_iter()
        .map(|(name, u)| {
            let r = ascend(grid, p, u, opts);
            (name, r)
        })
        .collect();
    let mut best = T::zero();
    let mut converged = true;
    let mut list = Vec::new();
    for (name, r) in runs {
        let (q, ok) = r?;
        converged &= ok;
        best = best.max(q);
        list.push((name, q));
    }
    let mu1 = first_eigenvalue(grid, T::lit(1e-8).max(T::epsilon() * T::lit(1e3)))?.0;
    let c_tilde = best * best * (T::one() + T::one() / mu1);
    Ok(EmbeddingReport { p, c_d: best, mu1, c_tilde, rho_d: rho_threshold(c_tilde, p), starts: list, converged })
}

/// Quotient of a fixed bump of radius `width` centred at `center`; it does
/// not depend on the surrounding domain once the bump fits inside.
pub fn bump_quotient<T: Real>(grid: &Grid<T>, center: Vec3<T>, width: T, p: T) -> Result<T> {
    if grid.depth(center) < width {
        return Err(Error::Domain("bump does not fit inside the domain".into()));
    }
    let u: Vec<T> = (0..grid.len())
        .map(|m| {
            let r = dist3(grid.center(m), center) / width;
            if r < T::one() {
                let s = T::one() - r * r;
                s * s
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(quotient(grid, &u, p))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositivityAudit<T: Real> {
    pub rho: T,
    pub rho_d: T,
    pub mu1: T,
    pub energy: T,
    /// `ρ² μ₁ / 4`
    pub bound: T,
    pub report: Report,
}

/// Minimizes on `grid` at mass `ρ ≤ ρ_D` and compares with `ρ²μ₁/4`.
pub fn positivity_audit<T: Real>(grid: &Grid<T>, p: T, rho: T, embedding: &EmbeddingReport<T>, opts: &SolverOptions) -> Result<PositivityAudit<T>> {
    if rho > embedding.rho_d {
        return Err(Error::Domain(format!("mass {rho} exceeds the threshold estimate {}", embedding.rho_d)));
    }
    let res = minimize_constrained(grid, p, rho, &Init::Preset(InitPreset::FirstEigenfield), opts)?;
    let bound = rho * rho * embedding.mu1 / T::lit(4.0);
    let dom = grid.spec.label();
    let mut report = Report::new("appendix");
    report.push(
        ReportRow::at_least("minimum energy >= 0.99 rho^2 mu1 / 4", &dom, None, res.energy.total.as_f64(), 0.99 * bound.as_f64(), 0.0)
            .with_note(format!("rho = {} = rho_D x {:.3}", rho.as_f64(), (rho / embedding.rho_d).as_f64())),
    );
    report.push(ReportRow::at_least("minimum energy positive", &dom, None, res.energy.total.as_f64(), 0.0, 0.0));
    Ok(PositivityAudit { rho, rho_d: embedding.rho_d, mu1: embedding.mu1, energy: res.energy.total, bound, report })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivergenceRow<T: Real> {
    pub lambda: T,
    pub c_d: T,
    pub mu1: T,
    pub c_tilde: T,
    pub rho_d: T,
    pub bump_quotient: T,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivergenceAudit<T: Real> {
    pub rows: Vec<DivergenceRow<T>>,
    pub report: Report,
}

/// `C̃_{λD}` along an increasing list of `λ` at fixed `cells_per_unit`.
pub fn divergence_audit<T: Real>(
    base: &DomainSpec<T>,
    lambdas: &[T],
    p: T,
    cells_per_unit: T,
    ratio_floor: f64,
    opts: &AscentOptions,
) -> Result<DivergenceAudit<T>> {
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) || lambdas.is_empty() {
        return Err(Error::Domain("lambda list must be nonempty and increasing".into()));
    }
    let c = base.center();
    let width = base.inradius() / T::lit(2.0);
    let mut rows = Vec::new();
    for &lam in lambdas {
        let spec = scale_domain(base, lam)?;
        let grid = build_grid(&spec, cells_per_unit, 1)?;
        let e = embedding_constant(&grid, p, opts)?;
        let centre: Vec3<T> = c.map(|v| v * lam);
        let bq = bump_quotient(&grid, centre, width, p)?;
        rows.push(DivergenceRow { lambda: lam, c_d: e.c_d, mu1: e.mu1, c_tilde: e.c_tilde, rho_d: e.rho_d, bump_quotient: bq });
    }
    let mut report = Report::new("appendix");
    let dom = base.label();
    for w in rows.windows(2) {
        let l = Some(w[1].lambda.as_f64());
        report.push(
            ReportRow::at_least("C_tilde ratio between consecutive lambda", &dom, l, (w[1].c_tilde / w[0].c_tilde).as_f64(), ratio_floor, 0.0)
                .with_note("tolerance is an artifact choice"),
        );
        report.push(ReportRow::at_most("rho_D strictly decreasing", &dom, l, w[1].rho_d.as_f64(), w[0].rho_d.as_f64() * (1.0 - 1e-12), 0.0));
        report.push(ReportRow::relative("fixed bump quotient independent of lambda", &dom, l, w[1].bump_quotient.as_f64(), w[0].bump_quotient.as_f64(), 1e-6));
    }
    let first = &rows[0];
    for r in &rows {
        let lam2 = (r.lambda * r.lambda).as_f64();
        report.push(ReportRow::at_least(
            "C_tilde / lambda^2 bounded below",
            &dom,
            Some(r.lambda.as_f64()),
            r.c_tilde.as_f64() / lam2,
            (first.bump_quotient * first.bump_quotient / first.mu1).as_f64(),
            0.0,
        ));
    }
    Ok(DivergenceAudit { rows, report })
}

pub fn field_quotient<T: Real>(grid: &Grid<T>, u: &ScalarField<T>, p: T) -> Result<T> {
    u.check(grid)?;
    Ok(quotient(grid, &u.values, p))
}
