//! Rescaling between the whole-space ground state `w_∞` of mass `ρ` and the
//! unit-mass minimizer `v` of the functional with nonlocal weight `ρ^α`:
//! `w_∞(x) = ρ^{a_u} v(ρ^{b_x} x)`.

use serde::{Deserialize, Serialize};

use crate::energy::{check_exponent, RadialFunctional, RadialPotential};
use crate::elliptic::RadialField;
use crate::error::{Error, Result};
use crate::minimize::{radial_minimize, RadialProblem, RadialSolveResult, SolverOptions, Status};
use crate::report::{Report, ReportRow};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents<T: Real> {
    pub p: T,
    /// `8(3−p)/(10−3p)`
    pub alpha: T,
    /// `(8 − 2(p−2))/(10−3p)`
    pub gamma: T,
    /// Amplitude exponent `4/(4 − 3(p−2))`.
    pub a_u: T,
    /// Space exponent `2(p−2)/(4 − 3(p−2))`.
    pub b_x: T,
}

pub fn exponents<T: Real>(p: T) -> Result<ScalingExponents<T>> {
    check_exponent(p)?;
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let den = T::lit(10.0) - three * p;
    let den_u = T::lit(4.0) - three * (p - two);
    Ok(ScalingExponents {
        p,
        alpha: T::lit(8.0) * (three - p) / den,
        gamma: (T::lit(8.0) - two * (p - two)) / den,
        a_u: T::lit(4.0) / den_u,
        b_x: two * (p - two) / den_u,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `v ↦ w = ρ^{a_u} v(ρ^{b_x} ·)`
    VToW,
    /// `w ↦ v = ρ^{−a_u} w(ρ^{−b_x} ·)`
    WToV,
}

/// Applies the rescaling exactly on meshes: values are multiplied by the
/// amplitude factor and the mesh spacing is divided by the space factor.
pub fn rescale<T: Real>(v: &RadialField<T>, rho: T, p: T, direction: Direction) -> Result<RadialField<T>> {
    v.check()?;
    if !(rho > T::zero()) {
        return Err(Error::Domain(format!("mass radius must be positive, got {rho}")));
    }
    let e = exponents(p)?;
    let sign = match direction {
        Direction::VToW => T::one(),
        Direction::WToV => -T::one(),
    };
    let amp = rho.powf(sign * e.a_u);
    let dilation = rho.powf(sign * e.b_x);
    Ok(RadialField {
        values: v.values.iter().map(|&x| amp * x).collect(),
        outer: v.outer / dilation,
        h: v.h / dilation,
    })
}

/// Terms of a radial field entering the identities: `∫|∇u|²`, `∫φ_u u²`
/// (Newton potential, unweighted) and `∫|u|^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTerms<T: Real> {
    pub gradient: T,
    pub nonlocal: T,
    pub power: T,
    pub omega: T,
}

fn terms<T: Real>(r: &RadialSolveResult<T>) -> RadialTerms<T> {
    let e = &r.energy;
    RadialTerms {
        gradient: T::lit(2.0) * e.kinetic,
        nonlocal: T::lit(4.0) * e.nonlocal / r.nonlocal_weight,
        power: e.p * e.power,
        omega: r.omega.omega,
    }
}

/// Evaluates the unweighted terms of an arbitrary radial field.
pub fn radial_terms<T: Real>(u: &RadialField<T>, p: T) -> Result<RadialTerms<T>> {
    use crate::energy::Functional;
    let mut f = RadialFunctional::new(u.outer, u.intervals(), p, RadialPotential::Newton)?;
    let mut g = vec![T::zero(); u.values.len()];
    let e = f.evaluate(&u.values, Some(&mut g))?;
    let m = crate::energy::lagrange(f.weights(), &u.values, &g)?;
    Ok(RadialTerms {
        gradient: T::lit(2.0) * e.energy.kinetic,
        nonlocal: T::lit(4.0) * e.energy.nonlocal,
        power: p * e.energy.power,
        omega: m.omega,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingAudit<T: Real> {
    pub rho: T,
    pub exponents: ScalingExponents<T>,
    pub w: RadialTerms<T>,
    pub v: RadialTerms<T>,
    pub w_status: Status,
    pub v_status: Status,
    pub report: Report,
}

/// Solves for `w_∞` (mass `ρ`, Newton potential, truncation radius
/// `radius`) and `v` (unit mass, nonlocal weight `ρ^α`, truncation radius
/// `ρ^{b_x}·radius`) and checks the term-by-term identities. The two meshes
/// are exact rescalings of each other.
pub fn scaling_audit<T: Real>(rho: T, p: T, radius: T, intervals: usize, tolerance: f64, opts: &SolverOptions) -> Result<ScalingAudit<T>> {
    let e = exponents(p)?;
    let w = radial_minimize(&RadialProblem::new(radius, intervals, p, rho, RadialPotential::Newton), None, opts)?;
    let mut vp = RadialProblem::new(radius * rho.powf(e.b_x), intervals, p, T::one(), RadialPotential::Newton);
    vp.nonlocal_weight = rho.powf(e.alpha);
    let v = radial_minimize(&vp, None, opts)?;
    let (tw, tv) = (terms(&w), terms(&v));
    let lam = None;
    let dom = format!("radial truncation R={}", radius.as_f64());
    let pow = |x: T| rho.powf(x).as_f64();
    let mut report = Report::new("scalings");
    let tag = |s: &str| format!("{s} (rho={})", rho.as_f64());
    report.push(ReportRow::relative(&tag("kinetic identity"), &dom, lam, tw.gradient.as_f64(), pow(e.gamma) * tv.gradient.as_f64(), tolerance));
    report.push(ReportRow::relative(&tag("nonlocal identity"), &dom, lam, tw.nonlocal.as_f64(), pow(e.alpha + e.gamma) * tv.nonlocal.as_f64(), tolerance));
    report.push(ReportRow::relative(&tag("power identity"), &dom, lam, tw.power.as_f64(), pow(e.gamma) * tv.power.as_f64(), tolerance));
    report.push(ReportRow::relative(
        &tag("multiplier relation"),
        &dom,
        lam,
        (rho * rho * tw.omega).as_f64(),
        pow(e.gamma) * tv.omega.as_f64(),
        tolerance,
    ));
    report.push(ReportRow::at_most(&tag("omega_inf negative"), &dom, lam, tw.omega.as_f64(), 0.0, 0.0));
    report.push(ReportRow::at_most(&tag("omega(v) negative"), &dom, lam, tv.omega.as_f64(), 0.0, 0.0));
    Ok(ScalingAudit { rho, exponents: e, w: tw, v: tv, w_status: w.status, v_status: v.status, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_exponents_at_two_and_a_half() {
        let e = exponents(2.5f64).unwrap();
        assert!((e.alpha - 1.6).abs() < 1e-15);
        assert!((e.gamma - 2.8).abs() < 1e-15);
        assert!((e.a_u - 1.6).abs() < 1e-15);
        assert!((e.b_x - 0.4).abs() < 1e-15);
        assert!(exponents(3.0f64).is_err());
        assert!(exponents(2.999_999f64).unwrap().alpha < 1e-4);
    }

    #[test]
    fn exponent_identities() {
        for k in 1..50 {
            let p = 2.0 + k as f64 / 50.0;
            let e = exponents(p).unwrap();
            assert!(e.alpha > 0.0 && e.gamma > 0.0);
            assert!((2.0 * e.a_u - 3.0 * e.b_x - 2.0).abs() < 1e-12);
            assert!((2.0 * e.a_u - e.b_x - e.gamma).abs() < 1e-12);
            assert!((4.0 * e.a_u - 5.0 * e.b_x - e.alpha - e.gamma).abs() < 1e-12);
            assert!((p * e.a_u - 3.0 * e.b_x - e.gamma).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_is_exact_and_invertible() {
        let v = RadialField::from_fn(10.0, 2000, |r: f64| (-r * r).exp()).unwrap();
        let id = rescale(&v, 1.0, 2.5, Direction::VToW).unwrap();
        assert_eq!(id, v);
        let m = v.mass();
        let w = rescale(&v, 0.5, 2.5, Direction::VToW).unwrap();
        assert!((w.mass() / (0.25 * m) - 1.0).abs() < 1e-12);
        let back = rescale(&w, 0.5, 2.5, Direction::WToV).unwrap();
        for (a, b) in back.values.iter().zip(&v.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((back.h - v.h).abs() < 1e-15);
    }

    #[test]
    fn rescaled_terms_follow_the_exponents() {
        let v = RadialField::from_fn(12.0, 1200, |r: f64| (-r * r / 4.0).exp()).unwrap();
        let (rho, p) = (0.5, 2.5);
        let e = exponents(p).unwrap();
        let w = rescale(&v, rho, p, Direction::VToW).unwrap();
        let (tv, tw) = (radial_terms(&v, p).unwrap(), radial_terms(&w, p).unwrap());
        assert!((tw.gradient / (rho.powf(e.gamma) * tv.gradient) - 1.0).abs() < 1e-10);
        assert!((tw.nonlocal / (rho.powf(e.alpha + e.gamma) * tv.nonlocal) - 1.0).abs() < 1e-10);
        assert!((tw.power / (rho.powf(e.gamma) * tv.power) - 1.0).abs() < 1e-10);
    }
}
