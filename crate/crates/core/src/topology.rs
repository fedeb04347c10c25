//! Barycenter map, transplantation of radial ground states, the sublevel
//! threshold `l(λ)` and containment checks.
//!
//! The barycenter `β(u) = ∫x|∇u|² / ∫|∇u|²` is assembled from the same link
//! differences as the kinetic energy: each interior link contributes its
//! squared difference at the link midpoint, and each wall link contributes
//! `w u²` at the midpoint of its in-domain part.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{region, DomainSpec, RegionPredicate};
use crate::elliptic::RadialField;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, OUTSIDE};
use crate::energy::energy_domain;
use crate::minimize::project_mass;
use crate::report::{Report, ReportRow};
use crate::scalar::{add3, dist3, norm3, sub3, Real, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub region: String,
    pub inside: bool,
    /// Signed distance of `β` to the region boundary (negative inside).
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarycenterReport<T: Real> {
    pub beta: Vec3<T>,
    /// `∫|∇u|²`
    pub kinetic_mass: T,
    pub containment: Vec<Containment>,
}

impl<T: Real> BarycenterReport<T> {
    /// Records whether `β` lies in `region`, allowing `slack`.
    pub fn check(&mut self, name: &str, region: &RegionPredicate<T>, slack: T) -> bool {
        let inside = region.contains_with_slack(self.beta, slack);
        let margin = region.base.signed_distance(self.beta) - region.margin;
        self.containment.push(Containment { region: name.to_string(), inside, margin: margin.as_f64() });
        inside
    }
}

enum Link<T> {
    /// Interior link to the given neighbour.
    Pair(usize),
    /// Wall link with the given coupling.
    Wall(T),
}

/// Visits every kinetic link of `u` as `(position, energy, cell, link)`,
/// where the energy is the link's contribution to `∫|∇u|² / h`.
fn for_each_link<T: Real>(grid: &Grid<T>, u: &[T], mut f: impl FnMut(Vec3<T>, T, usize, Link<T>)) {
    let half = T::lit(0.5);
    for m in 0..grid.len() {
        let x = grid.center(m);
        let nb = grid.neighbors(m);
        for dir in [1usize, 3, 5] {
            let n = nb[dir];
            if n != OUTSIDE {
                let d = u[m] - u[n as usize];
                let mut y = x;
                y[dir / 2] += half * grid.h;
                f(y, d * d, m, Link::Pair(n as usize));
            }
        }
        if let Some(w) = grid.walls(m) {
            for (dir, &wd) in w.iter().enumerate() {
                if wd == T::zero() {
                    continue;
                }
                let mut y = x;
                let reach = half * grid.h / wd;
                y[dir / 2] += if dir % 2 == 0 { -reach } else { reach };
                f(y, wd * u[m] * u[m], m, Link::Wall(wd));
            }
        }
    }
}

fn beta_sums<T: Real>(grid: &Grid<T>, u: &[T]) -> Result<(Vec3<T>, T)> {
    if u.len() != grid.len() {
        return Err(Error::Contract(format!("field has {} values, grid has {}", u.len(), grid.len())));
    }
    let mut num = [T::zero(); 3];
    let mut den = T::zero();
    for_each_link(grid, u, |y, e, _, _| {
        for a in 0..3 {
            num[a] += y[a] * e;
        }
        den += e;
    });
    if !(den > T::zero()) {
        return Err(Error::Contract("barycenter of a field with zero kinetic mass".into()));
    }
    Ok(([num[0] / den, num[1] / den, num[2] / den], den))
}

pub fn barycenter<T: Real>(u: &ScalarField<T>, grid: &Grid<T>) -> Result<BarycenterReport<T>> {
    let (beta, den) = beta_sums(grid, &u.values)?;
    Ok(BarycenterReport { beta, kinetic_mass: den * grid.h, containment: Vec::new() })
}

/// `β(u)` and its derivatives `∂β_a/∂u_i`.
pub fn barycenter_gradient<T: Real>(grid: &Grid<T>, u: &[T]) -> Result<(Vec3<T>, [Vec<T>; 3])> {
    let (beta, den) = beta_sums(grid, u)?;
    let n = grid.len();
    let mut jac = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    let two = T::lit(2.0);
    for_each_link(grid, u, |y, _, m, link| {
        let lever: Vec3<T> = std::array::from_fn(|a| (y[a] - beta[a]) / den);
        match link {
            Link::Pair(k) => {
                let d = two * (u[m] - u[k]);
                for a in 0..3 {
                    jac[a][m] += lever[a] * d;
                    jac[a][k] -= lever[a] * d;
                }
            }
            Link::Wall(w) => {
                let d = two * w * u[m];
                for a in 0..3 {
                    jac[a][m] += lever[a] * d;
                }
            }
        }
    });
    Ok((beta, jac))
}

/// `[Ψ(y)](x) = w(|x − y|)` sampled on `grid`, rescaled to `∫u² = ρ²`.
///
/// `y` must lie in `region` (the eroded domain).
pub fn transplant<T: Real>(w: &RadialField<T>, y: Vec3<T>, grid: &Grid<T>, region: &RegionPredicate<T>, rho: T) -> Result<ScalarField<T>> {
    w.check()?;
    if !region.contains(y) {
        return Err(Error::Domain(format!("transplant center {:?} is outside the eroded region", y.map(|v| v.as_f64()))));
    }
    let u = grid.sample(|x| {
        let r = dist3(x, y);
        if r >= w.outer {
            T::zero()
        } else {
            w.eval(r)
        }
    });
    project_mass(&u, grid, rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublevelThreshold<T: Real> {
    pub lambda: T,
    pub b_star: T,
    /// `M ρ⁴ / 4`
    pub m_term: T,
    pub level: T,
    /// Margin at which `M` was evaluated.
    pub delta: T,
}

/// `M ρ⁴ / 4`.
pub fn m_term<T: Real>(m: T, rho: T) -> T {
    m * rho.powi(4) / T::lit(4.0)
}

/// `l(λ) = b* + (1 + m_term)/λ`.
pub fn sublevel_threshold<T: Real>(b_star: T, lambda: T, m_term: T, delta: T) -> Result<SublevelThreshold<T>> {
    if !(lambda > T::one()) {
        return Err(Error::Domain(format!("threshold needs lambda > 1, got {lambda}")));
    }
    if !(m_term >= T::zero()) {
        return Err(Error::Domain(format!("M term must be nonnegative, got {m_term}")));
    }
    Ok(SublevelThreshold { lambda, b_star, m_term, level: b_star + (T::one() + m_term) / lambda, delta })
}

/// A field submitted to the containment audit.
#[derive(Clone, Debug)]
pub struct SublevelField<T: Real> {
    pub label: String,
    pub energy: T,
    pub beta: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentVerdict {
    pub label: String,
    pub energy: f64,
    pub beta: [f64; 3],
    /// `None` when the field is above the threshold and was skipped.
    pub contained: Option<bool>,
    /// Distance outside the slackened region (zero when contained).
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub level: f64,
    pub slack: f64,
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
    pub verdicts: Vec<ContainmentVerdict>,
}

impl ContainmentReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `β(u) ∈ region` (with `slack`) for every field with energy at most
/// `level`; fields above the level are recorded as skipped.
pub fn containment_audit<T: Real>(fields: &[SublevelField<T>], level: T, region: &RegionPredicate<T>, slack: T) -> ContainmentReport {
    let mut verdicts = Vec::with_capacity(fields.len());
    let (mut checked, mut skipped, mut violations) = (0, 0, 0);
    for f in fields {
        let beta = f.beta.map(|v| v.as_f64());
        if f.energy > level {
            skipped += 1;
            verdicts.push(ContainmentVerdict { label: f.label.clone(), energy: f.energy.as_f64(), beta, contained: None, excess: 0.0 });
            continue;
        }
        checked += 1;
        let inside = region.contains_with_slack(f.beta, slack);
        let sd = region.base.signed_distance(f.beta) - region.margin - slack;
        if !inside {
            violations += 1;
        }
        verdicts.push(ContainmentVerdict {
            label: f.label.clone(),
            energy: f.energy.as_f64(),
            beta,
            contained: Some(inside),
            excess: sd.max(T::zero()).as_f64(),
        });
    }
    ContainmentReport { level: level.as_f64(), slack: slack.as_f64(), checked, skipped, violations, verdicts }
}

/// Integer offsets `k` and points `center + k·spacing` of a cubic lattice
/// that fall inside `region`.
pub fn lattice<T: Real>(region: &RegionPredicate<T>, center: Vec3<T>, spacing: T) -> Result<Vec<([i64; 3], Vec3<T>)>> {
    if !(spacing > T::zero()) {
        return Err(Error::Domain(format!("lattice spacing must be positive, got {spacing}")));
    }
    let (lo, hi) = region.base.bounding_box();
    let reach = (0..3)
        .map(|a| ((hi[a] - center[a]).abs().max((center[a] - lo[a]).abs()) + region.margin.abs()) / spacing)
        .fold(T::zero(), T::max)
        .ceil()
        .to_i64()
        .unwrap_or(0);
    let mut out = Vec::new();
    for k in -reach..=reach {
        for j in -reach..=reach {
            for i in -reach..=reach {
                let q = [i, j, k];
                let y = std::array::from_fn(|a| center[a] + T::from_i64(q[a]).unwrap() * spacing);
                if region.contains(y) {
                    out.push((q, y));
                }
            }
        }
    }
    Ok(out)
}

/// Lattice spacing `max(h, 0.1 λ)` of the transplant audit.
pub fn lattice_spacing<T: Real>(h: T, lambda: T) -> T {
    h.max(T::lit(0.1) * lambda)
}

/// Representative of `k` under the 48 symmetries of the cube.
pub fn cube_orbit_key(k: [i64; 3]) -> [i64; 3] {
    let mut a = k.map(|v| v.abs());
    a.sort_unstable();
    a
}

/// Whether the mask and wall couplings are invariant under the symmetries
/// of the cube centred at `center`.
pub fn has_cube_symmetry<T: Real>(grid: &Grid<T>, center: Vec3<T>) -> bool {
    let n = grid.dims[0];
    if grid.dims.iter().any(|&d| d != n) {
        return false;
    }
    let tol = grid.h * T::lit(1e-9);
    for a in 0..3 {
        let mid = grid.origin[a] + T::from_usize_lossy(n) * grid.h / T::lit(2.0);
        if (mid - center[a]).abs() > tol {
            return false;
        }
    }
    let last = (n - 1) as i64;
    for m in 0..grid.len() {
        let c = grid.coords(m).map(|v| v as i64);
        let images = [[last - c[0], c[1], c[2]], [c[1], c[0], c[2]], [c[0], c[2], c[1]]];
        for q in images {
            match grid.masked_index(q[0], q[1], q[2]) {
                Some(k) => {
                    let (wa, wb) = (grid.walls(m).map(|w| w.iter().copied().sum::<T>()), grid.walls(k).map(|w| w.iter().copied().sum::<T>()));
                    match (wa, wb) {
                        (None, None) => {}
                        (Some(x), Some(y)) if (x - y).abs() <= T::lit(1e-9) * x.abs().max(T::one()) => {}
                        _ => return false,
                    }
                }
                None => return false,
            }
        }
    }
    true
}

/// Lower bound `(r / 2R)·λr` on `|β|` for fields concentrated in a half of
/// the annulus `A_{λR,λr}` far from its centre.
pub fn annulus_beta_floor<T: Real>(big_r: T, r: T, lambda: T) -> T {
    r / (T::lit(2.0) * big_r) * lambda * r
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransplantPoint {
    pub y: [f64; 3],
    pub beta: [f64; 3],
    pub offset: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransplantAudit {
    pub lambda: f64,
    pub level: f64,
    pub spacing: f64,
    pub points: usize,
    /// Distinct fields evaluated after the cube-symmetry reduction.
    pub evaluated: usize,
    pub worst_offset: TransplantPoint,
    pub worst_energy: TransplantPoint,
    pub containment: ContainmentReport,
    pub report: Report,
}

/// Transplants `w` to every lattice point of the eroded domain `(λΩ)` minus
/// `λr`, and checks `|β(Ψ(y)) − y| ≤ 2h`, `I(Ψ(y)) < l(λ)` and containment of
/// `β` in the `λr`-neighbourhood.
///
/// When the grid has the symmetries of the cube about the lattice centre only
/// one point per orbit is evaluated and the rest are mapped by symmetry.
pub fn transplant_audit<T: Real>(
    w: &RadialField<T>,
    grid: &Grid<T>,
    spec: &DomainSpec<T>,
    r: T,
    lambda: T,
    threshold: &SublevelThreshold<T>,
    p: T,
    rho: T,
    spacing: Option<T>,
) -> Result<TransplantAudit> {
    let inner = region(spec, -(lambda * r))?;
    let outer = region(spec, lambda * r)?;
    let center = spec.center();
    let spacing = spacing.unwrap_or_else(|| lattice_spacing(grid.h, lambda));
    let pts = lattice(&inner, center, spacing)?;
    if pts.is_empty() {
        return Err(Error::Geometry("transplant lattice is empty".into()));
    }
    let symmetric = has_cube_symmetry(grid, center);
    let mut reps: BTreeMap<[i64; 3], Vec3<T>> = BTreeMap::new();
    for (k, _) in &pts {
        let key = if symmetric { cube_orbit_key(*k) } else { *k };
        reps.entry(key).or_insert_with(|| std::array::from_fn(|a| center[a] + T::from_i64(key[a]).unwrap() * spacing));
    }
    let reps: Vec<([i64; 3], Vec3<T>)> = reps.into_iter().collect();
    let evals: Vec<Result<([i64; 3], Vec3<T>, T)>> = reps
        .par_iter()
        .map(|&(key, y)| {
            let u = transplant(w, y, grid, &inner, rho)?;
            let e = energy_domain(&u, grid, p)?.total;
            let b = barycenter(&u, grid)?.beta;
            Ok((key, sub3(b, y), e))
        })
        .collect();
    let mut by_key = BTreeMap::new();
    for e in evals {
        let (key, off, energy) = e?;
        by_key.insert(key, (off, energy));
    }
    let mut fields = Vec::with_capacity(pts.len());
    let mut all = Vec::with_capacity(pts.len());
    for (k, y) in &pts {
        let key = if symmetric { cube_orbit_key(*k) } else { *k };
        let (off_rep, energy) = by_key[&key];
        let off = if symmetric { map_offset(*k, off_rep) } else { off_rep };
        let beta = add3(*y, off);
        fields.push(SublevelField { label: format!("transplant {:?}", k), energy, beta });
        all.push(TransplantPoint { y: y.map(|v| v.as_f64()), beta: beta.map(|v| v.as_f64()), offset: norm3(off).as_f64(), energy: energy.as_f64() });
    }
    let slack = T::lit(2.0) * grid.h;
    let containment = containment_audit(&fields, threshold.level, &outer, slack);
    let worst_offset = all.iter().max_by(|a, b| a.offset.total_cmp(&b.offset)).cloned().unwrap();
    let worst_energy = all.iter().max_by(|a, b| a.energy.total_cmp(&b.energy)).cloned().unwrap();
    let dom = spec.label();
    let lam = Some(lambda.as_f64());
    let mut report = Report::new("topology");
    report.push(
        ReportRow::at_most("transplant barycenter offset <= 2h", &dom, lam, worst_offset.offset, slack.as_f64(), 0.0)
            .with_note(format!("worst at y = {:?} over {} points", worst_offset.y, all.len())),
    );
    let level = threshold.level.as_f64();
    report.push(
        ReportRow::new("transplant energy < l(lambda)", &dom, lam, worst_energy.energy, level, 0.0, crate::report::Comparison::AtMost)
            .require(worst_energy.energy < level)
            .with_note(format!("worst at y = {:?}", worst_energy.y)),
    );
    report.push(
        ReportRow::new("sublevel containment violations", &dom, lam, containment.violations as f64, 0.0, 0.0, crate::report::Comparison::Absolute)
            .with_note(format!("{} checked, {} skipped", containment.checked, containment.skipped)),
    );
    Ok(TransplantAudit {
        lambda: lambda.as_f64(),
        level,
        spacing: spacing.as_f64(),
        points: pts.len(),
        evaluated: by_key.len(),
        worst_offset,
        worst_energy,
        containment,
        report,
    })
}

/// Maps the barycenter offset computed at the orbit representative of `k`
/// back to `k` itself.
fn map_offset<T: Real>(k: [i64; 3], off: Vec3<T>) -> Vec3<T> {
    // Representative is (|k|) sorted ascending; undo the sort then the signs.
    let mut order = [0usize, 1, 2];
    order.sort_by_key(|&a| (k[a].abs(), a));
    let mut out = [T::zero(); 3];
    for (slot, &axis) in order.iter().enumerate() {
        out[axis] = if k[axis] < 0 { -off[slot] } else { off[slot] };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{region, DomainSpec};
    use crate::grid::build_grid;

    #[test]
    fn radial_field_has_centered_barycenter() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 2.0).unwrap(), 8.0, 1).unwrap();
        let c = [0.3, -0.2, 0.1];
        let u = g.sample(|x| (-dist3(x, c).powi(2) * 4.0).exp());
        let b = barycenter(&u, &g).unwrap();
        assert!(dist3(b.beta, c) < g.h, "{:?}", b.beta);
    }

    #[test]
    fn barycenter_is_scale_invariant() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 6.0, 1).unwrap();
        let u = g.sample(|x| 1.0 + x[0] - x[1] * x[2]);
        let a = barycenter(&u, &g).unwrap().beta;
        let b = barycenter(&u.scaled(-3.0), &g).unwrap().beta;
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
        assert!(barycenter(&g.zeros(), &g).is_err());
    }

    #[test]
    fn barycenter_gradient_matches_differences() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 5.0, 1).unwrap();
        let u = g.sample(|x| (1.0 - x[0] * x[0]) * (1.2 + x[1]) + 0.3 * x[2]);
        let (_, jac) = barycenter_gradient(&g, &u.values).unwrap();
        let eps = 1e-6;
        for &i in &[0usize, g.len() / 3, g.len() - 1] {
            let mut up = u.values.clone();
            up[i] += eps;
            let mut dn = u.values.clone();
            dn[i] -= eps;
            let bp = barycenter(&ScalarField::new(up), &g).unwrap().beta;
            let bm = barycenter(&ScalarField::new(dn), &g).unwrap().beta;
            for a in 0..3 {
                let fd = (bp[a] - bm[a]) / (2.0 * eps);
                assert!((fd - jac[a][i]).abs() < 1e-6 * (1.0 + fd.abs()), "{a} {i}: {fd} vs {}", jac[a][i]);
            }
        }
    }

    #[test]
    fn threshold_arithmetic() {
        let t = sublevel_threshold::<f64>(-1.0, 10.0, 0.5, 0.1).unwrap();
        assert!((t.level + 0.85).abs() < 1e-15);
        assert!(sublevel_threshold::<f64>(-1.0, 1.0, 0.5, 0.1).is_err());
        let far = sublevel_threshold::<f64>(-1.0, 1e12, 0.5, 0.1).unwrap();
        assert!((far.level + 1.0).abs() < 1e-11);
    }

    #[test]
    fn lattice_lies_in_region() {
        let base = DomainSpec::<f64>::cuboid([-2.0; 3], [2.0; 3]).unwrap();
        let r = region(&base, -1.0).unwrap();
        let pts = lattice(&r, [0.0; 3], 0.5).unwrap();
        assert_eq!(pts.len(), 5 * 5 * 5);
        assert!(pts.iter().all(|(_, y)| y.iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn orbit_key_is_canonical() {
        assert_eq!(cube_orbit_key([3, -1, 2]), [1, 2, 3]);
        assert_eq!(cube_orbit_key([-2, 3, 1]), cube_orbit_key([1, 2, 3]));
    }

    #[test]
    fn centred_cube_grid_is_symmetric() {
        let g = build_grid(&DomainSpec::<f64>::cuboid([-1.0; 3], [1.0; 3]).unwrap(), 4.0, 1).unwrap();
        assert!(has_cube_symmetry(&g, [0.0; 3]));
        let g = build_grid(&DomainSpec::<f64>::cuboid([-1.0; 3], [1.0, 1.0, 1.5]).unwrap(), 4.0, 1).unwrap();
        assert!(!has_cube_symmetry(&g, [0.0; 3]));
    }

    #[test]
    fn containment_skips_fields_above_level() {
        let base = DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap();
        let r = region(&base, 0.5).unwrap();
        let fields = vec![
            SublevelField { label: "in".into(), energy: -1.0, beta: [0.2, 0.0, 0.0] },
            SublevelField { label: "out".into(), energy: -1.0, beta: [3.0, 0.0, 0.0] },
            SublevelField { label: "high".into(), energy: 5.0, beta: [9.0, 0.0, 0.0] },
        ];
        let rep = containment_audit(&fields, 0.0, &r, 0.1);
        assert_eq!((rep.checked, rep.skipped, rep.violations), (2, 1, 1));
        assert!((rep.verdicts[1].excess - 1.4).abs() < 1e-12);
    }

    #[test]
    fn orbit_offsets_map_back_to_the_lattice_point() {
        let spec = DomainSpec::<f64>::cuboid([-2.0; 3], [2.0; 3]).unwrap();
        let g = build_grid(&spec, 4.0, 0).unwrap();
        assert!(has_cube_symmetry(&g, [0.0; 3]));
        let w = RadialField::from_fn(1.0, 64, |r: f64| (1.0 - r * r).max(0.0)).unwrap();
        let inner = region(&spec, -1.0).unwrap();
        let off = |k: [i64; 3]| {
            let y = k.map(|v| v as f64 * 0.25);
            let u = transplant(&w, y, &g, &inner, 0.5).unwrap();
            sub3(barycenter(&u, &g).unwrap().beta, y)
        };
        for k in [[-3, 1, 2], [2, -1, 0], [0, 0, -4], [1, 1, -2]] {
            let direct = off(k);
            let mapped = map_offset(k, off(cube_orbit_key(k)));
            for a in 0..3 {
                assert!((direct[a] - mapped[a]).abs() < 1e-12, "{k:?} {direct:?} {mapped:?}");
            }
        }
    }
}
