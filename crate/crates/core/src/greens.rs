//! Regular part `H(x,y;D)` of the Dirichlet Green's function
//! `G(x,y) = Γ(x−y) − H(x,y;D)` with `Γ(z) = 1/(4π|z|)`, the pair energy
//! `∬ H u²(x) u²(y)` and the margin family of bounds `M_D(δ)`.
//!
//! Numerically `H(·,y)` is the discrete harmonic function whose values at
//! the wall crossings of the boundary links equal `Γ(· − y)`. Because the
//! lift is linear in its wall data, the pair energy needs a single solve
//! whose data is the Newton potential of the (lumped) density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{cg_iteration_cap, conjugate_gradient, jacobi, POISSON_TOL};
use crate::energy::{energy_domain, energy_freespace_radial, EnergyBreakdown};
use crate::elliptic::RadialField;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, OUTSIDE};
use crate::scalar::{dist3, norm3, sub3, Real, Vec3};

/// Kernel evaluations allowed when assembling the wall data of a pair energy.
pub const PAIR_BUDGET: f64 = 2e9;

/// `Γ(z) = 1 / (4π|z|)`
#[inline]
pub fn fundamental<T: Real>(r: T) -> T {
    T::one() / (T::lit(4.0) * T::PI() * r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularMethod {
    ImageCharge,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularPartSample<T: Real> {
    pub x: Vec3<T>,
    pub y: Vec3<T>,
    pub value: T,
    pub method: RegularMethod,
}

/// Regular part of the ball `B_a(c)` by the image-charge formula
/// `H(x,y) = a / (4π |y−c| |x−c − a²(y−c)/|y−c|²|)`, with its limit
/// `1/(4πa)` at `y = c`.
pub fn regular_part_ball<T: Real>(x: Vec3<T>, y: Vec3<T>, a: T, center: Vec3<T>) -> Result<T> {
    if !(a > T::zero()) {
        return Err(Error::Domain(format!("ball radius must be positive, got {a}")));
    }
    let xs = sub3(x, center);
    let ys = sub3(y, center);
    let (rx, ry) = (norm3(xs), norm3(ys));
    let tol = a * T::lit(1e-12);
    if rx > a + tol || ry > a + tol {
        return Err(Error::Domain("regular part of the ball evaluated outside its closure".into()));
    }
    // | |y'| x' − a² ŷ | written without dividing by |y'|
    let den = if ry == T::zero() {
        a * a
    } else {
        let d: Vec3<T> = std::array::from_fn(|k| ry * xs[k] - a * a * ys[k] / ry);
        norm3(d)
    };
    Ok(a / (T::lit(4.0) * T::PI() * den))
}

/// Solves `-Δ_h v = 0` in the mask with `v = g` at every wall crossing.
fn harmonic_lift<T: Real>(grid: &Grid<T>, data: impl Fn(usize, usize, Vec3<T>) -> T) -> Result<Vec<T>> {
    let inv_h2 = T::one() / (grid.h * grid.h);
    let mut rhs = vec![T::zero(); grid.len()];
    for (m, b) in rhs.iter_mut().enumerate() {
        if let Some(w) = grid.walls(m) {
            for dir in 0..6 {
                if w[dir] > T::zero() {
                    let x = grid.wall_point(m, dir).expect("wall link");
                    *b += w[dir] * data(m, dir, x) * inv_h2;
                }
            }
        }
    }
    let mut v = vec![T::zero(); grid.len()];
    let tol = T::lit(POISSON_TOL).max(T::epsilon() * T::lit(100.0));
    conjugate_gradient(|x, y| grid.neg_laplacian(x, y), &jacobi(grid, T::zero()), &rhs, &mut v, tol, cg_iteration_cap(grid))?;
    Ok(v)
}

/// `H(·, y; D)` on the grid of `D`.
///
/// `y` must lie at depth at least `2h`.
pub fn regular_part_numeric<T: Real>(grid: &Grid<T>, y: Vec3<T>) -> Result<ScalarField<T>> {
    let depth = grid.depth(y);
    if depth < T::lit(2.0) * grid.h * (T::one() - T::lit(1e-9)) {
        return Err(Error::Domain(format!("source point is at depth {depth}, below 2h = {}", T::lit(2.0) * grid.h)));
    }
    Ok(ScalarField::new(harmonic_lift(grid, |_, _, x| fundamental(dist3(x, y)))?))
}

/// Trilinear interpolation of a grid field at `x`; cells outside the mask
/// contribute zero.
pub fn interpolate<T: Real>(grid: &Grid<T>, field: &[T], x: Vec3<T>) -> T {
    let half = T::lit(0.5);
    let mut base = [0i64; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        let t = (x[a] - grid.origin[a]) / grid.h - half;
        let f = t.floor();
        base[a] = f.to_i64().unwrap_or(i64::MIN / 2);
        frac[a] = t - f;
    }
    let mut s = T::zero();
    for corner in 0..8 {
        let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = T::one();
        for a in 0..3 {
            w *= if o[a] == 1 { frac[a] } else { T::one() - frac[a] };
        }
        if w == T::zero() {
            continue;
        }
        if let Some(m) = grid.masked_index(base[0] + o[0] as i64, base[1] + o[1] as i64, base[2] + o[2] as i64) {
            s += w * field[m];
        }
    }
    s
}

/// Numeric `H(x, y)` for arbitrary points, by interpolating the lift of `y`.
pub fn regular_part_at<T: Real>(grid: &Grid<T>, x: Vec3<T>, y: Vec3<T>) -> Result<RegularPartSample<T>> {
    let field = regular_part_numeric(grid, y)?;
    Ok(RegularPartSample { x, y, value: interpolate(grid, &field.values, x), method: RegularMethod::Numeric })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEnergy<T: Real> {
    /// `∬ H(x,y) u²(x) u²(y)`
    pub value: T,
    pub stride: usize,
    /// Number of source points the density was lumped onto.
    pub sources: usize,
}

/// Smallest stride whose source count keeps the wall data within
/// [`PAIR_BUDGET`] kernel evaluations.
pub fn default_stride<T: Real>(grid: &Grid<T>) -> usize {
    let walls = wall_count(grid) as f64;
    let mut stride = 1;
    while stride < 64 && (grid.len() as f64 / (stride * stride * stride) as f64) * walls > PAIR_BUDGET {
        stride += 1;
    }
    stride
}

fn wall_count<T: Real>(grid: &Grid<T>) -> usize {
    (0..grid.len())
        .filter_map(|m| grid.walls(m))
        .map(|w| w.iter().filter(|&&v| v > T::zero()).count())
        .sum()
}

/// Point masses `(position, weight)` approximating the density `f h³`.
///
/// Stride 1 uses every cell. Larger strides place sources on masked cells
/// whose coordinates are multiples of the stride and that lie at depth at
/// least `2h`; every cell's mass goes to its nearest source in the grid
/// graph.
fn lump_sources<T: Real>(grid: &Grid<T>, f: &[T], stride: usize) -> Result<Vec<(Vec3<T>, T)>> {
    let vol = grid.cell_volume();
    if stride == 1 {
        return Ok((0..grid.len()).filter(|&m| f[m] != T::zero()).map(|m| (grid.center(m), f[m] * vol)).collect());
    }
    let min_depth = T::lit(2.0) * grid.h;
    let s = stride as u32;
    let sources: Vec<usize> = (0..grid.len())
        .filter(|&m| grid.coords(m).iter().all(|&c| c % s == 0) && grid.depth(grid.center(m)) >= min_depth)
        .collect();
    if sources.is_empty() {
        return Err(Error::Geometry(format!("stride {stride} leaves no source point at depth >= 2h")));
    }
    // multi-source breadth-first search; ties go to the earlier source
    let mut owner = vec![OUTSIDE; grid.len()];
    let mut queue = std::collections::VecDeque::new();
    for (k, &m) in sources.iter().enumerate() {
        owner[m] = k as u32;
        queue.push_back(m);
    }
    while let Some(m) = queue.pop_front() {
        for &n in grid.neighbors(m) {
            if n != OUTSIDE && owner[n as usize] == OUTSIDE {
                owner[n as usize] = owner[m];
                queue.push_back(n as usize);
            }
        }
    }
    let mut weight = vec![T::zero(); sources.len()];
    for m in 0..grid.len() {
        if owner[m] == OUTSIDE {
            if f[m] != T::zero() {
                return Err(Error::Geometry("density on a mask component without a source point".into()));
            }
            continue;
        }
        weight[owner[m] as usize] += f[m] * vol;
    }
    Ok(sources.iter().zip(weight).filter(|(_, w)| *w != T::zero()).map(|(&m, w)| (grid.center(m), w)).collect())
}

/// `∫Γ(x − y) dμ(y)` over point masses, refining cells within two spacings
/// of `x` (stride 1 only) by 4³ sub-points.
fn newton_at<T: Real>(x: Vec3<T>, sources: &[(Vec3<T>, T)], h: T, refine: bool) -> T {
    let near = T::lit(2.0) * h;
    let quarter = h / T::lit(4.0);
    let mut s = T::zero();
    for &(y, w) in sources {
        let r = dist3(x, y);
        if refine && r < near {
            let mut acc = T::zero();
            for i in 0..4 {
                for j in 0..4 {
                    for k in 0..4 {
                        let o = [i, j, k].map(|q| (T::from_usize_lossy(q) - T::lit(1.5)) * quarter);
                        acc += fundamental(dist3(x, [y[0] + o[0], y[1] + o[1], y[2] + o[2]]));
                    }
                }
            }
            s += w * acc / T::lit(64.0);
        } else {
            s += w * fundamental(r);
        }
    }
    s
}

/// `∬_{D×D} H(x,y;D) u²(x) u²(y) dx dy`.
pub fn pair_energy_regular<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, stride: usize) -> Result<PairEnergy<T>> {
    u.check(grid)?;
    if stride == 0 {
        return Err(Error::Domain("sample stride must be at least 1".into()));
    }
    let f: Vec<T> = u.values.iter().map(|&v| v * v).collect();
    if f.iter().all(|&v| v == T::zero()) {
        return Ok(PairEnergy { value: T::zero(), stride, sources: 0 });
    }
    let sources = lump_sources(grid, &f, stride)?;
    let cost = sources.len() as f64 * wall_count(grid) as f64;
    if cost > PAIR_BUDGET {
        return Err(Error::Resource(format!(
            "{} sources x {} wall links exceeds the pair-energy budget; raise the stride",
            sources.len(),
            wall_count(grid)
        )));
    }
    // wall data in parallel, gathered in cell order
    let walls: Vec<(usize, [T; 6])> = (0..grid.len())
        .into_par_iter()
        .filter_map(|m| {
            let w = grid.walls(m)?;
            let mut vals = [T::zero(); 6];
            for dir in 0..6 {
                if w[dir] > T::zero() {
                    vals[dir] = newton_at(grid.wall_point(m, dir).unwrap(), &sources, grid.h, stride == 1);
                }
            }
            Some((m, vals))
        })
        .collect();
    let mut data = vec![[T::zero(); 6]; grid.len()];
    for (m, vals) in walls {
        data[m] = vals;
    }
    let psi = harmonic_lift(grid, |m, dir, _| data[m][dir])?;
    let value = f.iter().zip(&psi).map(|(&a, &b)| a * b).sum::<T>() * grid.cell_volume();
    Ok(PairEnergy { value, stride, sources: sources.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularBoundReport<T: Real> {
    pub delta: T,
    /// Largest sampled `H(x,x)` over points at depth `δ`.
    pub m_delta: T,
    pub argmax: Vec3<T>,
    pub samples: usize,
    /// `8π δ M(δ)`; stays near 1 when `H(x,x) ~ 1/(8π d(x))` blows up at the wall.
    pub blowup: T,
}

/// Points at depth `δ`, obtained by moving shell cell centres along the
/// signed-distance gradient; at most `max_samples`, evenly spread.
pub fn margin_points<T: Real>(grid: &Grid<T>, delta: T, max_samples: usize) -> Vec<Vec3<T>> {
    let h = grid.h;
    let shell: Vec<usize> = (0..grid.len())
        .filter(|&m| {
            let d = grid.depth(grid.center(m));
            d >= delta - h && d < delta + h
        })
        .collect();
    let take = shell.len().min(max_samples.max(1));
    let step = if take == 0 { 1 } else { shell.len() / take };
    let eps = h * T::lit(1e-3);
    let mut pts = Vec::with_capacity(take);
    for &m in shell.iter().step_by(step.max(1)).take(take) {
        let mut x = grid.center(m);
        for _ in 0..3 {
            let d = grid.depth(x);
            let grad: Vec3<T> = std::array::from_fn(|a| {
                let mut p = x;
                let mut q = x;
                p[a] += eps;
                q[a] -= eps;
                (grid.depth(p) - grid.depth(q)) / (T::lit(2.0) * eps)
            });
            let n2 = grad.iter().map(|&g| g * g).sum::<T>();
            if n2 == T::zero() {
                break;
            }
            let t = (d - delta) / n2;
            for a in 0..3 {
                x[a] -= t * grad[a];
            }
        }
        pts.push(x);
    }
    pts
}

/// `M_D(δ) = max H(x,x)` over points at depth `δ`.
///
/// The regular part is a positive semidefinite kernel, so pairs never
/// exceed the diagonal, and `H(x,x)` decreases with depth.
pub fn sup_regular_part<T: Real>(grid: &Grid<T>, delta: T) -> Result<RegularBoundReport<T>> {
    if delta < T::lit(2.0) * grid.h * (T::one() - T::lit(1e-9)) {
        return Err(Error::Domain(format!("margin {delta} is below 2h = {}", T::lit(2.0) * grid.h)));
    }
    let pts = margin_points(grid, delta, 64);
    if pts.is_empty() {
        return Err(Error::Geometry(format!("no point of {} at depth {delta}", grid.spec.label())));
    }
    let vals: Vec<Result<T>> = pts.par_iter().map(|&x| Ok(regular_part_at(grid, x, x)?.value)).collect();
    let mut best = (T::neg_infinity(), pts[0]);
    for (v, &x) in vals.into_iter().zip(&pts) {
        let v = v?;
        if v > best.0 {
            best = (v, x);
        }
    }
    Ok(RegularBoundReport {
        delta,
        m_delta: best.0,
        argmax: best.1,
        samples: pts.len(),
        blowup: T::lit(8.0) * T::PI() * delta * best.0,
    })
}

/// `M_D(δ)` for each margin, ordered as given.
pub fn sup_regular_family<T: Real>(grid: &Grid<T>, deltas: &[T]) -> Result<Vec<RegularBoundReport<T>>> {
    deltas.iter().map(|&d| sup_regular_part(grid, d)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck<T: Real> {
    /// `I(u;D)` on the grid.
    pub domain: EnergyBreakdown<T>,
    /// Nonlocal term of `I(u;ℝ³)` from the radial Newton potential.
    pub free_nonlocal: T,
    pub pair: T,
    /// `I(u;ℝ³) − ¼∬H u²u²`
    pub predicted: T,
    /// `|I(u;D) − predicted| / |I(u;D)|`
    pub relative_residual: T,
    /// `|I(u;D) − predicted| / (¼∬H u²u²)`
    pub pair_residual: T,
}

/// Compares `I(u;D)` with `I(u;ℝ³) − ¼∬H u²u²` for a radial profile centred
/// at `center` and sampled on `grid`. Kinetic and power terms are shared, so
/// the comparison isolates the nonlocal identity.
pub fn relation_check<T: Real>(profile: &RadialField<T>, center: Vec3<T>, grid: &Grid<T>, p: T, stride: usize) -> Result<RelationCheck<T>> {
    let u = grid.sample(|x| {
        let r = dist3(x, center);
        if r >= profile.outer {
            T::zero()
        } else {
            profile.eval(r)
        }
    });
    let domain = energy_domain(&u, grid, p)?;
    let free_nonlocal = energy_freespace_radial(profile, p)?.nonlocal;
    let pair = pair_energy_regular(&u, grid, stride)?.value;
    let predicted = domain.kinetic + free_nonlocal - domain.power - pair / T::lit(4.0);
    let relative_residual = (domain.total - predicted).abs() / domain.total.abs();
    let pair_residual = (domain.total - predicted).abs() / (pair / T::lit(4.0));
    Ok(RelationCheck { domain, free_nonlocal, pair, predicted, relative_residual, pair_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::grid::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_in_ball(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
        loop {
            let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-r..r));
            if norm3(x) < r {
                return x;
            }
        }
    }

    #[test]
    fn image_charge_center_limit() {
        let v = regular_part_ball([0.0; 3], [0.0; 3], 1.0, [0.0; 3]).unwrap();
        assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-15);
        // G = Γ − H vanishes on the sphere
        let y = [0.2, -0.1, 0.3];
        for x in [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.6, 0.0, 0.8]] {
            let g: f64 = fundamental(dist3(x, y)) - regular_part_ball(x, y, 1.0, [0.0; 3]).unwrap();
            assert!(g.abs() < 1e-14, "{g}");
        }
        assert!(regular_part_ball([2.0, 0.0, 0.0], [0.0; 3], 1.0, [0.0; 3]).is_err());
    }

    #[test]
    fn image_charge_symmetry_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_in_ball(&mut rng, 1.0);
            let y = random_in_ball(&mut rng, 1.0);
            let a = regular_part_ball(x, y, 1.0, [0.0; 3]).unwrap();
            let b = regular_part_ball(y, x, 1.0, [0.0; 3]).unwrap();
            assert!((a - b).abs() <= 1e-12 * a);
            for lam in [2.0, 5.0] {
                let s = regular_part_ball(x.map(|v| v * lam), y.map(|v| v * lam), lam, [0.0; 3]).unwrap();
                assert!((s - a / lam).abs() <= 1e-12 * a);
            }
        }
    }

    #[test]
    fn numeric_matches_image_charge() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 16.0, 1).unwrap();
        let h = regular_part_numeric(&g, [0.0; 3]).unwrap();
        let mut worst: f64 = 0.0;
        for m in 0..g.len() {
            let x = g.center(m);
            if norm3(x) <= 0.7 {
                let exact = regular_part_ball(x, [0.0; 3], 1.0, [0.0; 3]).unwrap();
                worst = worst.max((h.values[m] / exact - 1.0).abs());
            }
        }
        assert!(worst < 0.03, "{worst}");
        // discrete harmonicity away from the wall
        let mut lap = vec![0.0; g.len()];
        g.neg_laplacian(&h.values, &mut lap);
        let scale = h.values.iter().fold(0.0f64, |a, &b| a.max(b.abs())) / (g.h * g.h);
        for m in 0..g.len() {
            if !g.boundary[m] {
                assert!(lap[m].abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn uniform_ball_pair_energy() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 12.0, 1).unwrap();
        let one = g.sample(|_| 1.0);
        let e = pair_energy_regular(&one, &g, 1).unwrap();
        let exact = 4.0 * PI / 9.0;
        assert!((e.value / exact - 1.0).abs() < 0.05, "{}", e.value);
        assert_eq!(pair_energy_regular(&g.zeros(), &g, 1).unwrap().value, 0.0);
    }

    #[test]
    fn strided_pair_energy_is_close() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 12.0, 1).unwrap();
        let u = g.sample(|x| (1.0 - norm3(x).powi(2)).max(0.0));
        let full = pair_energy_regular(&u, &g, 1).unwrap().value;
        let coarse = pair_energy_regular(&u, &g, 2).unwrap();
        assert!(coarse.sources < g.len() / 4);
        assert!((coarse.value / full - 1.0).abs() < 0.05, "{} {full}", coarse.value);
    }

    #[test]
    fn margin_bound_matches_robin_function() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 16.0, 1).unwrap();
        let rep = sup_regular_part(&g, 0.3).unwrap();
        let exact = 1.0 / (4.0 * PI * (1.0 - 0.49));
        assert!((rep.m_delta / exact - 1.0).abs() < 0.05, "{}", rep.m_delta);
        let wider = sup_regular_part(&g, 0.5).unwrap();
        assert!(wider.m_delta <= rep.m_delta);
        assert!(sup_regular_part(&g, 0.1).is_err());
    }

    #[test]
    fn numeric_regular_part_is_symmetric() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 12.0, 1).unwrap();
        let x = [0.3, 0.1, -0.2];
        let y = [-0.25, 0.2, 0.15];
        let a = regular_part_at(&g, x, y).unwrap().value;
        let b = regular_part_at(&g, y, x).unwrap().value;
        assert!((a / b - 1.0).abs() < 0.01, "{a} {b}");
        assert!(a > 0.0);
    }

    #[test]
    fn lumping_conserves_mass() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 10.0, 1).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|m| 1.0 + g.center(m)[0]).collect();
        let total: f64 = f.iter().sum::<f64>() * g.cell_volume();
        for stride in [1, 2, 3] {
            let s = lump_sources(&g, &f, stride).unwrap();
            let w: f64 = s.iter().map(|(_, w)| w).sum();
            assert!((w / total - 1.0).abs() < 1e-12);
        }
    }
}
