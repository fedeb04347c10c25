//! The functional `I(u;D) = ½∫|∇u|² + ¼∫φ_u u² − (1/p)∫|u|^p`, its first
//! variation and the Lagrange multiplier of the mass constraint.
//!
//! Discrete functionals implement [`Functional`]: energies are quadratures of
//! nodal values and gradients are exact derivatives of those quadratures with
//! respect to the nodal values (`dE_i = m_i g_i` with quadrature weight `m_i`).

use serde::{Deserialize, Serialize};

use crate::elliptic::radial::radial_potential;
use crate::elliptic::{poisson_dirichlet_into, shifted_solve, RadialField, POISSON_TOL};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, OUTSIDE};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown<T: Real> {
    /// `½∫|∇u|²`
    pub kinetic: T,
    /// `¼∫φ_u u²` (times the nonlocal weight, if any)
    pub nonlocal: T,
    /// `(1/p)∫|u|^p`
    pub power: T,
    pub total: T,
    pub p: T,
    /// `∫u²`
    pub mass: T,
}

impl<T: Real> EnergyBreakdown<T> {
    pub fn new(kinetic: T, nonlocal: T, power: T, p: T, mass: T) -> Self {
        Self { kinetic, nonlocal, power, total: kinetic + nonlocal - power, p, mass }
    }

    /// `ω = (∫|∇u|² + ∫φu² − ∫|u|^p) / ρ²` assembled from the stored terms.
    pub fn omega(&self) -> Result<T> {
        if !(self.mass > T::zero()) {
            return Err(Error::Contract("multiplier of a zero-mass field".into()));
        }
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        Ok((two * self.kinetic + four * self.nonlocal - self.p * self.power) / self.mass)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierEstimate<T: Real> {
    pub omega: T,
    /// Discrete L² norm of `g − ωu`.
    pub residual: T,
}

pub fn check_exponent<T: Real>(p: T) -> Result<()> {
    if !(p > T::lit(2.0) && p < T::lit(3.0)) {
        return Err(Error::Domain(format!("exponent p must lie in (2, 3), got {p}")));
    }
    Ok(())
}

/// `|u|^{p−2} u`, zero at zero.
#[inline]
pub(crate) fn power_derivative<T: Real>(u: T, p: T) -> T {
    if u == T::zero() {
        T::zero()
    } else {
        u.abs().powf(p - T::lit(2.0)) * u
    }
}

/// Multiplier and Euler–Lagrange defect from a nodal gradient `de = M g`.
pub fn lagrange<T: Real>(weights: &[T], u: &[T], de: &[T]) -> Result<MultiplierEstimate<T>> {
    let mass: T = weights.iter().zip(u).map(|(&m, &v)| m * v * v).sum();
    if !(mass > T::zero()) {
        return Err(Error::Contract("multiplier of a zero-mass field".into()));
    }
    let omega = u.iter().zip(de).map(|(&a, &b)| a * b).sum::<T>() / mass;
    let mut res = T::zero();
    for i in 0..u.len() {
        let m = weights[i];
        if m > T::zero() {
            let d = de[i] - omega * m * u[i];
            res += d * d / m;
        }
    }
    Ok(MultiplierEstimate { omega, residual: res.sqrt() })
}

/// `∫|∇u|²` on a grid: squared forward differences over every link touching
/// the mask, with wall links weighted by their closure coefficient.
pub fn dirichlet_integral<T: Real>(grid: &Grid<T>, u: &[T]) -> T {
    let mut s = T::zero();
    for m in 0..grid.len() {
        let nb = grid.neighbors(m);
        for d in [1, 3, 5] {
            let n = nb[d];
            if n != OUTSIDE {
                let diff = u[m] - u[n as usize];
                s += diff * diff;
            }
        }
        if let Some(w) = grid.walls(m) {
            let wsum: T = w.iter().copied().sum();
            s += wsum * u[m] * u[m];
        }
    }
    s * grid.h
}

/// Result of one evaluation of a discrete functional.
#[derive(Clone, Copy, Debug)]
pub struct Evaluation<T: Real> {
    /// Quantity being minimized (the energy, plus any penalty).
    pub objective: T,
    pub energy: EnergyBreakdown<T>,
}

/// A discretized energy on nodal values with quadrature weights.
pub trait Functional<T: Real> {
    fn len(&self) -> usize;

    /// Quadrature weights `m_i` with `∫u² ≈ Σ m_i u_i²`.
    fn weights(&self) -> &[T];

    /// Evaluates the functional and, if requested, the nodal gradient.
    fn evaluate(&mut self, u: &[T], grad: Option<&mut [T]>) -> Result<Evaluation<T>>;

    /// Applies an SPD approximation of the inverse Hessian to a nodal gradient.
    fn precondition(&mut self, v: &[T], out: &mut [T]) -> Result<()>;

    /// Enforces pinned (Dirichlet) values in place.
    fn constrain(&self, _u: &mut [T]) {}
}

/// `I(·;D)` on a masked grid with the Dirichlet potential, optionally with a
/// weight on the nonlocal term.
pub struct GridFunctional<'g, T: Real> {
    pub grid: &'g Grid<T>,
    pub p: T,
    pub nonlocal_weight: T,
    /// Shift `σ` of the Sobolev preconditioner `(−Δ_h + σ)⁻¹`.
    pub shift: T,
    pub poisson_tol: T,
    weights: Vec<T>,
    phi: Vec<T>,
    scratch: Vec<T>,
}

impl<'g, T: Real> GridFunctional<'g, T> {
    pub fn new(grid: &'g Grid<T>, p: T) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self {
            grid,
            p,
            nonlocal_weight: T::one(),
            shift: T::lit(0.05),
            poisson_tol: T::lit(POISSON_TOL).max(T::epsilon() * T::lit(100.0)),
            weights: vec![grid.cell_volume(); grid.len()],
            phi: vec![T::zero(); grid.len()],
            scratch: vec![T::zero(); grid.len()],
        })
    }

    pub fn with_shift(mut self, shift: T) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_nonlocal_weight(mut self, weight: T) -> Self {
        self.nonlocal_weight = weight;
        self
    }

    /// Potential of the last evaluated iterate.
    pub fn potential(&self) -> &[T] {
        &self.phi
    }

    fn solve_potential(&mut self, u: &[T]) -> Result<()> {
        let src = ScalarField::new(u.iter().map(|&v| v * v).collect());
        poisson_dirichlet_into(&src, self.grid, self.poisson_tol, &mut self.phi)?;
        Ok(())
    }
}

impl<T: Real> Functional<T> for GridFunctional<'_, T> {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn weights(&self) -> &[T] {
        &self.weights
    }

    fn evaluate(&mut self, u: &[T], grad: Option<&mut [T]>) -> Result<Evaluation<T>> {
        if u.len() != self.grid.len() {
            return Err(Error::Contract(format!("field has {} values, grid has {}", u.len(), self.grid.len())));
        }
        self.solve_potential(u)?;
        let vol = self.grid.cell_volume();
        let w = self.nonlocal_weight;
        let (mut nl, mut pw, mut mass) = (T::zero(), T::zero(), T::zero());
        for i in 0..u.len() {
            let u2 = u[i] * u[i];
            nl += self.phi[i] * u2;
            pw += u[i].abs().powf(self.p);
            mass += u2;
        }
        // ½∫φu² − ¼∫|∇φ|² is stationary in φ, so the solver error enters
        // the nonlocal energy only quadratically
        self.grid.neg_laplacian(&self.phi, &mut self.scratch);
        let stiff: T = self.phi.iter().zip(&self.scratch).map(|(&a, &b)| a * b).sum();
        let nl = nl / T::lit(2.0) - stiff / T::lit(4.0);
        let kinetic = dirichlet_integral(self.grid, u) / T::lit(2.0);
        let energy = EnergyBreakdown::new(kinetic, w * nl * vol, pw * vol / self.p, self.p, mass * vol);
        if let Some(g) = grad {
            self.grid.neg_laplacian(u, g);
            for i in 0..u.len() {
                g[i] = vol * (g[i] + w * self.phi[i] * u[i] - power_derivative(u[i], self.p));
            }
        }
        Ok(Evaluation { objective: energy.total, energy })
    }

    fn precondition(&mut self, v: &[T], out: &mut [T]) -> Result<()> {
        let inv = T::one() / self.grid.cell_volume();
        for (s, &x) in self.scratch.iter_mut().zip(v) {
            *s = x * inv;
        }
        out.iter_mut().for_each(|x| *x = T::zero());
        let tol = T::lit(1e-6).max(T::epsilon() * T::lit(100.0));
        shifted_solve(self.grid, self.shift, &self.scratch, out, tol, 400)?;
        Ok(())
    }
}

/// Potential used by a radial functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialPotential {
    /// Dirichlet potential of the ball `B_a` (bounded domain).
    Dirichlet,
    /// Whole-space Newton potential (truncated whole space).
    Newton,
}

/// `I(·;B_a)` (or the truncated whole-space functional) for radial fields on
/// `r_j = j h`, `j = 0..=J`, with `u_J = 0` pinned.
pub struct RadialFunctional<T: Real> {
    pub h: T,
    pub p: T,
    pub nonlocal_weight: T,
    pub potential: RadialPotential,
    pub shift: T,
    weights: Vec<T>,
    /// Link coefficients `4π r_{j+½}² / h`.
    links: Vec<T>,
    phi: Vec<T>,
}

impl<T: Real> RadialFunctional<T> {
    pub fn new(outer: T, intervals: usize, p: T, potential: RadialPotential) -> Result<Self> {
        check_exponent(p)?;
        let mesh = RadialField::from_fn(outer, intervals, |_| T::zero())?;
        let h = mesh.h;
        let four_pi = T::lit(4.0) * T::PI();
        let links = (0..intervals)
            .map(|j| {
                let r = (T::from_usize_lossy(j) + T::lit(0.5)) * h;
                four_pi * r * r / h
            })
            .collect();
        Ok(Self {
            h,
            p,
            nonlocal_weight: T::one(),
            potential,
            shift: T::lit(0.05),
            weights: mesh.volume_weights(),
            links,
            phi: vec![T::zero(); intervals + 1],
        })
    }

    pub fn with_nonlocal_weight(mut self, weight: T) -> Self {
        self.nonlocal_weight = weight;
        self
    }

    pub fn with_shift(mut self, shift: T) -> Self {
        self.shift = shift;
        self
    }

    pub fn intervals(&self) -> usize {
        self.links.len()
    }

    pub fn outer(&self) -> T {
        T::from_usize_lossy(self.intervals()) * self.h
    }

    /// Potential of the last evaluated iterate (weight included).
    pub fn potential_values(&self) -> &[T] {
        &self.phi
    }

    /// `∫|∇u|²` of nodal values.
    pub fn dirichlet_integral(&self, u: &[T]) -> T {
        self.links.iter().enumerate().map(|(j, &k)| k * (u[j + 1] - u[j]) * (u[j + 1] - u[j])).sum()
    }
}

impl<T: Real> Functional<T> for RadialFunctional<T> {
    fn len(&self) -> usize {
        self.weights.len()
    }

    fn weights(&self) -> &[T] {
        &self.weights
    }

    fn evaluate(&mut self, u: &[T], grad: Option<&mut [T]>) -> Result<Evaluation<T>> {
        if u.len() != self.weights.len() {
            return Err(Error::Contract(format!("field has {} nodes, mesh has {}", u.len(), self.weights.len())));
        }
        let f: Vec<T> = u.iter().map(|&v| v * v).collect();
        self.phi = radial_potential(&f, self.h, self.potential == RadialPotential::Dirichlet);
        let w = self.nonlocal_weight;
        self.phi.iter_mut().for_each(|v| *v *= w);
        let (mut nl, mut pw, mut mass) = (T::zero(), T::zero(), T::zero());
        for j in 0..u.len() {
            let m = self.weights[j];
            nl += m * self.phi[j] * f[j];
            pw += m * u[j].abs().powf(self.p);
            mass += m * f[j];
        }
        let kinetic = self.dirichlet_integral(u) / T::lit(2.0);
        let energy = EnergyBreakdown::new(kinetic, nl / T::lit(4.0), pw / self.p, self.p, mass);
        if let Some(g) = grad {
            for j in 0..u.len() {
                g[j] = self.weights[j] * (self.phi[j] * u[j] - power_derivative(u[j], self.p));
            }
            for (j, &k) in self.links.iter().enumerate() {
                let c = k * (u[j + 1] - u[j]);
                g[j] -= c;
                g[j + 1] += c;
            }
            let last = u.len() - 1;
            g[last] = T::zero();
        }
        Ok(Evaluation { objective: energy.total, energy })
    }

    /// Solves the tridiagonal system `(K + σM) z = v` with `z_J = 0`.
    fn precondition(&mut self, v: &[T], out: &mut [T]) -> Result<()> {
        let n = self.intervals();
        let mut diag = vec![T::zero(); n];
        for j in 0..n {
            diag[j] = self.shift * self.weights[j] + self.links[j] + if j > 0 { self.links[j - 1] } else { T::zero() };
        }
        // Thomas algorithm; the off-diagonal of row j (to j+1) is -links[j].
        let mut c = vec![T::zero(); n];
        let mut d = vec![T::zero(); n];
        c[0] = -self.links[0] / diag[0];
        d[0] = v[0] / diag[0];
        for j in 1..n {
            let sub = -self.links[j - 1];
            let denom = diag[j] - sub * c[j - 1];
            c[j] = if j + 1 < n { -self.links[j] / denom } else { T::zero() };
            d[j] = (v[j] - sub * d[j - 1]) / denom;
        }
        out[n] = T::zero();
        out[n - 1] = d[n - 1];
        for j in (0..n - 1).rev() {
            out[j] = d[j] - c[j] * out[j + 1];
        }
        Ok(())
    }

    fn constrain(&self, u: &mut [T]) {
        if let Some(last) = u.last_mut() {
            *last = T::zero();
        }
    }
}

/// Energy of `u` on the grid's domain (Dirichlet potential).
pub fn energy_domain<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, p: T) -> Result<EnergyBreakdown<T>> {
    u.check(grid)?;
    Ok(GridFunctional::new(grid, p)?.evaluate(&u.values, None)?.energy)
}

/// Unconstrained first variation `g = −Δ_h u + φ_u u − |u|^{p−2}u`.
pub fn gradient<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, p: T) -> Result<ScalarField<T>> {
    u.check(grid)?;
    let mut g = vec![T::zero(); grid.len()];
    GridFunctional::new(grid, p)?.evaluate(&u.values, Some(&mut g))?;
    let inv = T::one() / grid.cell_volume();
    Ok(ScalarField::new(g.into_iter().map(|v| v * inv).collect()))
}

/// `ω` from the multiplier formula and the Euler–Lagrange defect.
pub fn multiplier<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, p: T) -> Result<MultiplierEstimate<T>> {
    u.check(grid)?;
    let mut f = GridFunctional::new(grid, p)?;
    let mut g = vec![T::zero(); grid.len()];
    f.evaluate(&u.values, Some(&mut g))?;
    lagrange(f.weights(), &u.values, &g)
}

/// Energy of a radial field on the ball of its mesh (Dirichlet potential,
/// `u(outer) = 0` assumed).
pub fn energy_radial<T: Real>(u: &RadialField<T>, p: T, potential: RadialPotential) -> Result<EnergyBreakdown<T>> {
    u.check()?;
    let mut f = RadialFunctional::new(u.outer, u.intervals(), p, potential)?;
    Ok(f.evaluate(&u.values, None)?.energy)
}

/// Whole-space energy `I(u;ℝ³)` of a compactly supported radial field.
pub fn energy_freespace_radial<T: Real>(u: &RadialField<T>, p: T) -> Result<EnergyBreakdown<T>> {
    energy_radial(u, p, RadialPotential::Newton)
}

/// Whole-space energy of a grid field (diagnostic).
///
/// The potential is a Dirichlet solve on a ball of diameter `padding` times
/// the support diameter, aligned with the field's grid, plus the monopole
/// correction `Q/(4πR)`, which is the ball's regular part at its centre.
pub fn energy_freespace<T: Real>(u: &ScalarField<T>, grid: &Grid<T>, p: T, padding: T) -> Result<EnergyBreakdown<T>> {
    use crate::domain::DomainSpec;
    use crate::grid::build_grid_aligned;
    use crate::scalar::dist3;
    check_exponent(p)?;
    u.check(grid)?;
    if padding < T::lit(2.0) {
        return Err(Error::Contract(format!("free-space padding {padding} is below twice the support")));
    }
    let vol = grid.cell_volume();
    let q: T = u.values.iter().map(|&v| v * v).sum::<T>() * vol;
    if q == T::zero() {
        return Ok(EnergyBreakdown::new(T::zero(), T::zero(), T::zero(), p, T::zero()));
    }
    let mut c = [T::zero(); 3];
    for m in 0..grid.len() {
        let x = grid.center(m);
        for a in 0..3 {
            c[a] += x[a] * u.values[m] * u.values[m] * vol / q;
        }
    }
    let support = (0..grid.len())
        .filter(|&m| u.values[m] != T::zero())
        .map(|m| dist3(grid.center(m), c))
        .fold(T::zero(), T::max)
        + grid.h;
    let radius = padding * support;
    let big = build_grid_aligned(&DomainSpec::ball(c, radius)?, grid, 1)?;
    let mut v = big.zeros();
    for m in 0..grid.len() {
        if u.values[m] != T::zero() {
            let k = big
                .locate(grid.center(m))
                .ok_or_else(|| Error::Contract("field support leaves the padded ball".into()))?;
            v.values[k] = u.values[m];
        }
    }
    let mut e = energy_domain(&v, &big, p)?;
    let monopole = q * q / (T::lit(4.0) * T::PI() * radius) / T::lit(4.0);
    e = EnergyBreakdown::new(
        dirichlet_integral(grid, &u.values) / T::lit(2.0),
        e.nonlocal + monopole,
        e.power,
        p,
        e.mass,
    );
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::elliptic::first_eigenvalue;
    use crate::grid::build_grid;
    use crate::scalar::norm3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ball(r: f64, cpu: f64) -> Grid<f64> {
        build_grid(&DomainSpec::ball([0.0; 3], r).unwrap(), cpu, 1).unwrap()
    }

    #[test]
    fn zero_field_has_zero_energy_and_gradient() {
        let g = ball(1.0, 6.0);
        let e = energy_domain(&g.zeros(), &g, 2.5).unwrap();
        assert_eq!((e.kinetic, e.nonlocal, e.power, e.total), (0.0, 0.0, 0.0, 0.0));
        assert!(gradient(&g.zeros(), &g, 2.5).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigenfield_kinetic_is_half_eigenvalue() {
        let g = ball(1.0, 16.0);
        let (mu, u) = first_eigenvalue(&g, 1e-9).unwrap();
        let e = energy_domain(&u, &g, 2.5).unwrap();
        assert!((e.kinetic - mu / 2.0).abs() < 1e-8);
        assert!((e.kinetic / (PI * PI / 2.0) - 1.0).abs() < 0.015);
        let w = multiplier(&u, &g, 2.5).unwrap();
        let ints = 4.0 * e.nonlocal - 2.5 * e.power;
        assert!((w.omega - (mu + ints)).abs() < 1e-8);
    }

    #[test]
    fn terms_are_homogeneous() {
        let g = ball(1.0, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = g.sample(|_| rng.gen_range(-1.0..1.0));
        let e1 = energy_domain(&u, &g, 2.5).unwrap();
        let t: f64 = 1.7;
        let e2 = energy_domain(&u.scaled(t), &g, 2.5).unwrap();
        assert!((e2.kinetic / e1.kinetic - t * t).abs() < 1e-12);
        assert!((e2.nonlocal / e1.nonlocal - t.powi(4)).abs() < 1e-8);
        assert!((e2.power / e1.power - t.powf(2.5)).abs() < 1e-12);
    }

    #[test]
    fn directional_derivative_matches_gradient() {
        let g = ball(1.0, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = g.sample(|_| rng.gen_range(-1.0..1.0));
        let v = g.sample(|_| rng.gen_range(-1.0..1.0));
        let gr = gradient(&u, &g, 2.5).unwrap();
        let exact: f64 = gr.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>() * g.cell_volume();
        let eps = 1e-4;
        let plus = ScalarField::new(u.values.iter().zip(&v.values).map(|(a, b)| a + eps * b).collect());
        let minus = ScalarField::new(u.values.iter().zip(&v.values).map(|(a, b)| a - eps * b).collect());
        let fd = (energy_domain(&plus, &g, 2.5).unwrap().total - energy_domain(&minus, &g, 2.5).unwrap().total) / (2.0 * eps);
        assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
    }

    #[test]
    fn radial_gradient_matches_finite_differences() {
        let mut f = RadialFunctional::new(4.0, 64, 2.5, RadialPotential::Dirichlet).unwrap();
        let u: Vec<f64> = (0..=64).map(|j| (1.0 - (j as f64 / 64.0).powi(2)) * (1.0 + 0.3 * (j as f64).sin())).collect();
        let mut g = vec![0.0; 65];
        f.evaluate(&u, Some(&mut g)).unwrap();
        for j in [0usize, 5, 31, 63] {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let fd = (f.evaluate(&up, None).unwrap().objective - f.evaluate(&dn, None).unwrap().objective) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-6 * g[j].abs().max(1e-3), "node {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn radial_preconditioner_inverts_the_shifted_stiffness() {
        let mut f = RadialFunctional::new(2.0, 32, 2.5, RadialPotential::Newton).unwrap().with_shift(0.3);
        let v: Vec<f64> = (0..=32).map(|j| ((j * 7) % 5) as f64 - 2.0).collect();
        let mut z = vec![0.0; 33];
        f.precondition(&v, &mut z).unwrap();
        // K z via the kinetic gradient of a quadratic-only functional
        let k = f.links.clone();
        for j in 0..32 {
            let mut kz = f.shift * f.weights[j] * z[j];
            if j > 0 {
                kz += k[j - 1] * (z[j] - z[j - 1]);
            }
            kz += k[j] * (z[j] - z[j + 1]);
            assert!((kz - v[j]).abs() < 1e-10);
        }
        assert_eq!(z[32], 0.0);
    }

    #[test]
    fn uniform_ball_nonlocal_gap() {
        // u² = 1 on B_1: free-space minus Dirichlet nonlocal = ¼ · 4π/9
        let u = RadialField::from_fn(1.0, 20_000, |_| 1.0).unwrap();
        let free = energy_freespace_radial(&u, 2.5).unwrap();
        let dir = energy_radial(&u, 2.5, RadialPotential::Dirichlet).unwrap();
        assert!((free.nonlocal - dir.nonlocal - PI / 9.0).abs() < 1e-6);
    }

    #[test]
    fn freespace_grid_energy_tracks_radial_value() {
        let g = ball(1.0, 12.0);
        let prof = |r: f64| if r < 1.0 { (1.0 - r * r).powi(2) } else { 0.0 };
        let u = g.sample(|x| prof(norm3(x)));
        let e3 = energy_freespace(&u, &g, 2.5, 3.0).unwrap();
        let ur = RadialField::from_fn(1.0, 4000, prof).unwrap();
        let er = energy_freespace_radial(&ur, 2.5).unwrap();
        assert!((e3.nonlocal / er.nonlocal - 1.0).abs() < 0.03, "{} vs {}", e3.nonlocal, er.nonlocal);
        assert!(energy_freespace(&u, &g, 2.5, 1.5).is_err());
    }

    #[test]
    fn domain_monotonicity() {
        // a field compactly supported in B_1 has lower energy on B_1 than on B_2
        let g1 = ball(1.0, 10.0);
        let g2 = build_grid(&DomainSpec::ball([0.0; 3], 2.0).unwrap(), 10.0, 1).unwrap();
        let prof = |x: [f64; 3]| (0.64 - norm3(x).powi(2)).max(0.0);
        let e1 = energy_domain(&g1.sample(prof), &g1, 2.5).unwrap();
        let e2 = energy_domain(&g2.sample(prof), &g2, 2.5).unwrap();
        assert!((e1.kinetic - e2.kinetic).abs() < 1e-12 && (e1.power - e2.power).abs() < 1e-12);
        assert!(e1.nonlocal < e2.nonlocal);
        assert!(e1.total < e2.total);
    }

    #[test]
    fn exponent_outside_range_is_rejected() {
        let g = ball(1.0, 4.0);
        assert!(matches!(energy_domain(&g.zeros(), &g, 3.0), Err(Error::Domain(_))));
    }
}
