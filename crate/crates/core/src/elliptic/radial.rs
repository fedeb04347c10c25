//! Radial fields on a uniform mesh `r_j = j h`, `j = 0..=J`, and their
//! potentials.
//!
//! Potentials use the kernel form
//! `φ(r_i) = Σ_j w_j s_j² f_j (1/max(r_i, s_j) − 1/a)` with global trapezoid
//! weights `w_j`; the free-space (Newton) variant drops the `1/a` term. With
//! global weights the quadratic form `∫ φ_f g` is symmetric in `f` and `g`,
//! which keeps energies and their derivatives exactly consistent. The `1/r`
//! factor at `r = 0` is taken as its limit (the inner integral vanishes).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialField<T: Real> {
    /// Values at `r_j = j h`, `j = 0..=J`.
    pub values: Vec<T>,
    /// Outer radius `J h`; the field vanishes beyond it.
    pub outer: T,
    pub h: T,
}

impl<T: Real> RadialField<T> {
    /// Samples `f` on `J + 1` nodes of `[0, outer]`.
    pub fn from_fn(outer: T, intervals: usize, f: impl Fn(T) -> T) -> Result<Self> {
        if !(outer > T::zero()) || intervals == 0 {
            return Err(Error::Contract(format!(
                "radial mesh needs outer > 0 and at least one interval, got {outer} / {intervals}"
            )));
        }
        let h = outer / T::from_usize_lossy(intervals);
        let values = (0..=intervals).map(|j| f(T::from_usize_lossy(j) * h)).collect();
        Ok(Self { values, outer, h })
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![T::zero(); self.values.len()], outer: self.outer, h: self.h }
    }

    pub fn with_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, outer: self.outer, h: self.h }
    }

    /// Number of intervals `J`.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    #[inline]
    pub fn radius(&self, j: usize) -> T {
        T::from_usize_lossy(j) * self.h
    }

    /// Trapezoid weight of node `j` on `[0, outer]`.
    #[inline]
    pub fn weight(&self, j: usize) -> T {
        if j == 0 || j + 1 == self.values.len() {
            self.h / T::lit(2.0)
        } else {
            self.h
        }
    }

    /// Volume weights `4π r_j² w_j` such that `∫_{B} f dx ≈ Σ m_j f_j`.
    pub fn volume_weights(&self) -> Vec<T> {
        let four_pi = T::lit(4.0) * T::PI();
        (0..self.values.len())
            .map(|j| {
                let r = self.radius(j);
                four_pi * r * r * self.weight(j)
            })
            .collect()
    }

    /// `∫_{ℝ³} f(|x|) dx` for the field's values.
    pub fn integrate(&self) -> T {
        self.volume_weights().iter().zip(&self.values).map(|(&m, &v)| m * v).sum()
    }

    /// `∫ u²` over the ball.
    pub fn mass(&self) -> T {
        self.volume_weights().iter().zip(&self.values).map(|(&m, &v)| m * v * v).sum()
    }

    /// Linear interpolation at radius `r`, zero beyond `outer`.
    pub fn eval(&self, r: T) -> T {
        if r < T::zero() || r >= self.outer {
            return if r == self.outer { *self.values.last().unwrap() } else { T::zero() };
        }
        let t = r / self.h;
        let j = t.floor().to_usize().unwrap_or(0).min(self.intervals() - 1);
        let f = t - T::from_usize_lossy(j);
        self.values[j] * (T::one() - f) + self.values[j + 1] * f
    }

    pub fn check(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::Contract("radial field needs at least two nodes".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("radial field contains non-finite value {v}")));
        }
        Ok(())
    }
}

/// Kernel-form potential of the density `f`; `dirichlet` drops the constant
/// that makes the potential vanish at `outer`.
pub(crate) fn radial_potential<T: Real>(f: &[T], h: T, dirichlet: bool) -> Vec<T> {
    let n = f.len();
    let last = n - 1;
    let w = |j: usize| if j == 0 || j == last { h / T::lit(2.0) } else { h };
    let r = |j: usize| T::from_usize_lossy(j) * h;
    // prefix[i] = Σ_{j<=i} w s² f ; suffix[i] = Σ_{j>i} w s f
    let mut prefix = vec![T::zero(); n];
    let mut acc = T::zero();
    for j in 0..n {
        let s = r(j);
        acc += w(j) * s * s * f[j];
        prefix[j] = acc;
    }
    let mut suffix = vec![T::zero(); n];
    let mut acc = T::zero();
    for j in (0..n).rev() {
        suffix[j] = acc;
        acc += w(j) * r(j) * f[j];
    }
    let total = prefix[last];
    let outer = r(last);
    (0..n)
        .map(|i| {
            let inner = if i == 0 { T::zero() } else { prefix[i] / r(i) };
            let mut phi = inner + suffix[i];
            if dirichlet {
                phi -= total / outer;
            }
            phi
        })
        .collect()
}

/// Whole-space potential of `u²`: `φ(r) = (1/r)∫₀^r s²u² ds + ∫_r^∞ s u² ds`.
pub fn newton_potential_radial<T: Real>(u: &RadialField<T>) -> Result<RadialField<T>> {
    u.check()?;
    let f: Vec<T> = u.values.iter().map(|&v| v * v).collect();
    Ok(u.with_values(radial_potential(&f, u.h, false)))
}

/// Solves `-(r² φ')' = r² source` on `[0, a]` with `φ(a) = 0`.
///
/// The source is extended by zero when `a` exceeds its mesh.
pub fn poisson_dirichlet_radial<T: Real>(source: &RadialField<T>, a: T) -> Result<RadialField<T>> {
    source.check()?;
    if !(a > T::zero()) {
        return Err(Error::Domain(format!("outer radius must be positive, got {a}")));
    }
    let tol = source.h * T::lit(1e-6);
    if a < source.outer - tol {
        return Err(Error::Contract(format!(
            "Dirichlet radius {a} is inside the source support {}",
            source.outer
        )));
    }
    let intervals = (a / source.h).round().to_usize().unwrap_or(0);
    if ((T::from_usize_lossy(intervals) * source.h) - a).abs() > tol {
        return Err(Error::Contract(format!("radius {a} is not a mesh multiple of h = {}", source.h)));
    }
    let mut f = source.values.clone();
    f.resize(intervals + 1, T::zero());
    let phi = radial_potential(&f, source.h, true);
    Ok(RadialField { values: phi, outer: a, h: source.h })
}

#[cfg(test)]
mod tests {
    use super::*;

    // indicator of the unit ball, with the midpoint value at the jump
    fn unit_indicator(outer: f64, intervals: usize) -> RadialField<f64> {
        RadialField::from_fn(outer, intervals, |r| {
            if (r - 1.0).abs() < 1e-9 {
                0.5f64.sqrt()
            } else if r < 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn newton_potential_of_uniform_ball() {
        let u = unit_indicator(2.0, 20_000);
        let phi = newton_potential_radial(&u).unwrap();
        assert!((phi.values[0] - 0.5).abs() < 1e-6);
        let mut err: f64 = 0.0;
        for j in 0..phi.values.len() {
            let r = u.radius(j);
            let exact = if r <= 1.0 { (3.0 - r * r) / 6.0 } else { 1.0 / (3.0 * r) };
            err = err.max((phi.values[j] - exact).abs());
        }
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn zero_density_zero_potential() {
        let u = RadialField::from_fn(3.0, 100, |_| 0.0).unwrap();
        assert!(newton_potential_radial(&u).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(poisson_dirichlet_radial(&u, 3.0).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirichlet_unit_source() {
        let s = RadialField::<f64>::from_fn(1.0, 10_000, |_| 1.0).unwrap();
        let phi = poisson_dirichlet_radial(&s, 1.0).unwrap();
        let err = (0..phi.values.len())
            .map(|j| {
                let r = s.radius(j);
                (phi.values[j] - (1.0 - r * r) / 6.0).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn dirichlet_and_newton_differ_by_a_constant_inside() {
        let u = RadialField::<f64>::from_fn(1.0, 10_000, |_| 1.0).unwrap();
        let free = newton_potential_radial(&u).unwrap();
        let src = u.with_values(u.values.iter().map(|v| v * v).collect());
        let dir = poisson_dirichlet_radial(&src, 1.0).unwrap();
        for j in 0..free.values.len() {
            assert!((free.values[j] - dir.values[j] - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn dirichlet_extends_source_by_zero() {
        let s = RadialField::<f64>::from_fn(1.0, 1000, |_| 1.0).unwrap();
        let phi = poisson_dirichlet_radial(&s, 2.0).unwrap();
        assert_eq!(phi.values.len(), 2001);
        assert!(phi.values.last().unwrap().abs() < 1e-14);
        assert!(poisson_dirichlet_radial(&s, 0.5).is_err());
    }

    #[test]
    fn mass_of_unit_ball_indicator() {
        let u = RadialField::<f64>::from_fn(1.0, 4000, |_| 1.0).unwrap();
        assert!((u.mass() - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-6);
    }
}
