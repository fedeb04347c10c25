//! Symbolic domains, their dilations by λ and their r-erosions/dilations.
//!
//! A [`DomainSpec`] keeps the base geometry and a separate scale factor; the
//! set it describes is `scale · base`. Scaling acts on the set, so the
//! dilation of a ball centred at `x0` is centred at `λ x0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm3, scale3, sub3, Real, Vec3};

/// Base geometry of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind<T: Real> {
    Ball {
        center: Vec3<T>,
        radius: T,
    },
    /// Open shell `inner < |x - center| < outer`.
    Annulus {
        center: Vec3<T>,
        inner: T,
        outer: T,
    },
    Box {
        lo: Vec3<T>,
        hi: Vec3<T>,
    },
    /// Solid torus around the z axis through `center`.
    SolidTorus {
        #[serde(default = "zero3")]
        center: Vec3<T>,
        major: T,
        minor: T,
    },
    /// Ball of radius `radius` about the origin standing in for all of space.
    TruncatedSpace {
        radius: T,
    },
}

fn zero3<T: Real>() -> Vec3<T> {
    [T::zero(); 3]
}

fn one<T: Real>() -> T {
    T::one()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec<T: Real> {
    #[serde(flatten)]
    pub kind: DomainKind<T>,
    #[serde(default = "one")]
    pub scale: T,
}

impl<T: Real> DomainSpec<T> {
    pub fn new(kind: DomainKind<T>) -> Result<Self> {
        let spec = Self { kind, scale: T::one() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ball(center: Vec3<T>, radius: T) -> Result<Self> {
        Self::new(DomainKind::Ball { center, radius })
    }

    pub fn annulus(center: Vec3<T>, inner: T, outer: T) -> Result<Self> {
        Self::new(DomainKind::Annulus { center, inner, outer })
    }

    pub fn cuboid(lo: Vec3<T>, hi: Vec3<T>) -> Result<Self> {
        Self::new(DomainKind::Box { lo, hi })
    }

    pub fn solid_torus(major: T, minor: T) -> Result<Self> {
        Self::new(DomainKind::SolidTorus { center: zero3(), major, minor })
    }

    pub fn truncated_space(radius: T) -> Result<Self> {
        Self::new(DomainKind::TruncatedSpace { radius })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !(self.scale > T::zero()) || !self.scale.is_finite() {
            return Err(Error::Geometry(format!("scale must be positive, got {}", self.scale)));
        }
        match &self.kind {
            DomainKind::Ball { center, radius } => {
                if !finite(center) || !(*radius > T::zero()) {
                    return Err(Error::Geometry(format!("ball radius must be positive, got {radius}")));
                }
            }
            DomainKind::Annulus { center, inner, outer } => {
                if !finite(center) || !(*inner > T::zero() && inner < outer) {
                    return Err(Error::Geometry(format!(
                        "annulus needs 0 < inner < outer, got inner={inner} outer={outer}"
                    )));
                }
            }
            DomainKind::Box { lo, hi } => {
                if !finite(lo) || !finite(hi) || (0..3).any(|a| !(lo[a] < hi[a])) {
                    return Err(Error::Geometry(format!("box needs lo < hi componentwise, got {lo:?} {hi:?}")));
                }
            }
            DomainKind::SolidTorus { center, major, minor } => {
                if !finite(center) || !(*minor > T::zero() && minor < major) {
                    return Err(Error::Geometry(format!(
                        "torus needs 0 < minor < major, got major={major} minor={minor}"
                    )));
                }
            }
            DomainKind::TruncatedSpace { radius } => {
                if !(*radius > T::zero()) {
                    return Err(Error::Geometry(format!("truncation radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    /// Same set with the scale folded into the geometry (scale = 1).
    pub fn effective(&self) -> Self {
        let s = self.scale;
        let kind = match &self.kind {
            DomainKind::Ball { center, radius } => DomainKind::Ball { center: scale3(s, *center), radius: s * *radius },
            DomainKind::Annulus { center, inner, outer } => DomainKind::Annulus {
                center: scale3(s, *center),
                inner: s * *inner,
                outer: s * *outer,
            },
            DomainKind::Box { lo, hi } => DomainKind::Box { lo: scale3(s, *lo), hi: scale3(s, *hi) },
            DomainKind::SolidTorus { center, major, minor } => DomainKind::SolidTorus {
                center: scale3(s, *center),
                major: s * *major,
                minor: s * *minor,
            },
            DomainKind::TruncatedSpace { radius } => DomainKind::TruncatedSpace { radius: s * *radius },
        };
        Self { kind, scale: T::one() }
    }

    /// Signed distance to the boundary of the base (unscaled) geometry.
    fn base_signed_distance(&self, x: Vec3<T>) -> T {
        match &self.kind {
            DomainKind::Ball { center, radius } => norm3(sub3(x, *center)) - *radius,
            DomainKind::Annulus { center, inner, outer } => {
                let d = norm3(sub3(x, *center));
                (d - *outer).max(*inner - d)
            }
            DomainKind::Box { lo, hi } => {
                let two = T::lit(2.0);
                let mut outside = T::zero();
                let mut inside = T::neg_infinity();
                for a in 0..3 {
                    let c = (lo[a] + hi[a]) / two;
                    let half = (hi[a] - lo[a]) / two;
                    let q = (x[a] - c).abs() - half;
                    outside += q.max(T::zero()) * q.max(T::zero());
                    inside = inside.max(q);
                }
                outside.sqrt() + inside.min(T::zero())
            }
            DomainKind::SolidTorus { center, major, minor } => {
                let y = sub3(x, *center);
                let rho = (y[0] * y[0] + y[1] * y[1]).sqrt() - *major;
                (rho * rho + y[2] * y[2]).sqrt() - *minor
            }
            DomainKind::TruncatedSpace { radius } => norm3(x) - *radius,
        }
    }

    /// Signed distance to the boundary of `scale · base`; negative inside.
    pub fn signed_distance(&self, x: Vec3<T>) -> T {
        self.scale * self.base_signed_distance(scale3(T::one() / self.scale, x))
    }

    /// Membership in the open set.
    pub fn contains(&self, x: Vec3<T>) -> bool {
        self.signed_distance(x) < T::zero()
    }

    /// Largest radius of a ball contained in the domain.
    pub fn inradius(&self) -> T {
        let two = T::lit(2.0);
        let r = match &self.kind {
            DomainKind::Ball { radius, .. } | DomainKind::TruncatedSpace { radius } => *radius,
            DomainKind::Annulus { inner, outer, .. } => (*outer - *inner) / two,
            DomainKind::Box { lo, hi } => (0..3).map(|a| (hi[a] - lo[a]) / two).fold(T::infinity(), T::min),
            DomainKind::SolidTorus { minor, .. } => *minor,
        };
        self.scale * r
    }

    pub fn diameter(&self) -> T {
        let two = T::lit(2.0);
        let d = match &self.kind {
            DomainKind::Ball { radius, .. } | DomainKind::TruncatedSpace { radius } => two * *radius,
            DomainKind::Annulus { outer, .. } => two * *outer,
            DomainKind::Box { lo, hi } => norm3(sub3(*hi, *lo)),
            DomainKind::SolidTorus { major, minor, .. } => two * (*major + *minor),
        };
        self.scale * d
    }

    /// Axis-aligned bounding box `(lo, hi)` of the scaled set.
    pub fn bounding_box(&self) -> (Vec3<T>, Vec3<T>) {
        let (lo, hi) = match &self.kind {
            DomainKind::Ball { center, radius } => {
                (center.map(|c| c - *radius), center.map(|c| c + *radius))
            }
            DomainKind::Annulus { center, outer, .. } => (center.map(|c| c - *outer), center.map(|c| c + *outer)),
            DomainKind::Box { lo, hi } => (*lo, *hi),
            DomainKind::SolidTorus { center, major, minor } => {
                let r = *major + *minor;
                (
                    [center[0] - r, center[1] - r, center[2] - *minor],
                    [center[0] + r, center[1] + r, center[2] + *minor],
                )
            }
            DomainKind::TruncatedSpace { radius } => ([-*radius; 3], [*radius; 3]),
        };
        (scale3(self.scale, lo), scale3(self.scale, hi))
    }

    /// Geometric centre used for symmetric initial guesses.
    pub fn center(&self) -> Vec3<T> {
        let c = match &self.kind {
            DomainKind::Ball { center, .. }
            | DomainKind::Annulus { center, .. }
            | DomainKind::SolidTorus { center, .. } => *center,
            DomainKind::Box { lo, hi } => {
                let two = T::lit(2.0);
                [(lo[0] + hi[0]) / two, (lo[1] + hi[1]) / two, (lo[2] + hi[2]) / two]
            }
            DomainKind::TruncatedSpace { .. } => zero3(),
        };
        scale3(self.scale, c)
    }

    /// Same domain in another scalar type.
    pub fn cast<S: Real>(&self) -> DomainSpec<S> {
        let c = |v: T| S::lit(v.as_f64());
        let c3 = |v: Vec3<T>| v.map(c);
        let kind = match &self.kind {
            DomainKind::Ball { center, radius } => DomainKind::Ball { center: c3(*center), radius: c(*radius) },
            DomainKind::Annulus { center, inner, outer } => DomainKind::Annulus { center: c3(*center), inner: c(*inner), outer: c(*outer) },
            DomainKind::Box { lo, hi } => DomainKind::Box { lo: c3(*lo), hi: c3(*hi) },
            DomainKind::SolidTorus { center, major, minor } => DomainKind::SolidTorus { center: c3(*center), major: c(*major), minor: c(*minor) },
            DomainKind::TruncatedSpace { radius } => DomainKind::TruncatedSpace { radius: c(*radius) },
        };
        DomainSpec { kind, scale: c(self.scale) }
    }

    /// Short human-readable label, e.g. `ball(r=1)x8`.
    pub fn label(&self) -> String {
        let base = match &self.kind {
            DomainKind::Ball { radius, .. } => format!("ball(r={radius})"),
            DomainKind::Annulus { inner, outer, .. } => format!("annulus({inner},{outer})"),
            DomainKind::Box { lo, hi } => format!("box({:?},{:?})", lo, hi),
            DomainKind::SolidTorus { major, minor, .. } => format!("torus({major},{minor})"),
            DomainKind::TruncatedSpace { radius } => format!("space(R={radius})"),
        };
        if self.scale == T::one() {
            base
        } else {
            format!("{base}x{}", self.scale)
        }
    }
}

/// Returns the dilated set `λ · D`. Composition multiplies the scales.
pub fn scale_domain<T: Real>(spec: &DomainSpec<T>, lambda: T) -> Result<DomainSpec<T>> {
    if !(lambda >= T::one()) {
        return Err(Error::Domain(format!("expansion factor must be >= 1, got {lambda}")));
    }
    Ok(DomainSpec { kind: spec.kind.clone(), scale: spec.scale * lambda })
}

/// Erosion (`margin < 0`) or dilation (`margin > 0`) of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPredicate<T: Real> {
    pub base: DomainSpec<T>,
    pub margin: T,
}

impl<T: Real> RegionPredicate<T> {
    /// For erosion: points of the domain at distance at least `|margin|` from
    /// the boundary. For dilation: points at distance at most `margin` from
    /// the domain.
    pub fn contains(&self, x: Vec3<T>) -> bool {
        let sd = self.base.signed_distance(x);
        if self.margin == T::zero() {
            sd < T::zero()
        } else {
            sd <= self.margin
        }
    }

    /// Same as [`contains`](Self::contains) with an extra tolerance added to the margin.
    pub fn contains_with_slack(&self, x: Vec3<T>, slack: T) -> bool {
        self.base.signed_distance(x) <= self.margin + slack
    }
}

pub fn region<T: Real>(spec: &DomainSpec<T>, margin: T) -> Result<RegionPredicate<T>> {
    spec.validate()?;
    if margin < T::zero() && -margin >= spec.inradius() {
        return Err(Error::Geometry(format!(
            "erosion by {} empties {} (inradius {})",
            -margin,
            spec.label(),
            spec.inradius()
        )));
    }
    Ok(RegionPredicate { base: spec.clone(), margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scaling_moves_the_center() {
        let b = DomainSpec::ball([1.0, 0.0, 0.0], 1.0).unwrap();
        let s = scale_domain(&b, 2.0).unwrap().effective();
        assert_eq!(s.kind, DomainKind::Ball { center: [2.0, 0.0, 0.0], radius: 2.0 });

        let a = DomainSpec::annulus([1.0, 0.0, 0.0], 1.0, 2.0).unwrap();
        let s = scale_domain(&a, 3.0).unwrap().effective();
        assert_eq!(s.kind, DomainKind::Annulus { center: [3.0, 0.0, 0.0], inner: 3.0, outer: 6.0 });
    }

    #[test]
    fn unit_scale_is_identity() {
        let b = DomainSpec::cuboid([-1.0, 0.0, 0.5], [2.0, 1.0, 3.0]).unwrap();
        assert_eq!(scale_domain(&b, 1.0).unwrap(), b);
    }

    #[test]
    fn shrinking_is_rejected() {
        let b = DomainSpec::ball([0.0; 3], 1.0).unwrap();
        assert!(matches!(scale_domain(&b, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        assert!(DomainSpec::ball([0.0; 3], 0.0).is_err());
        assert!(DomainSpec::annulus([0.0; 3], 2.0, 1.0).is_err());
        assert!(DomainSpec::cuboid([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(DomainSpec::solid_torus(1.0, 1.5).is_err());
    }

    #[test]
    fn ball_erosion_and_dilation_are_concentric_balls() {
        let b = DomainSpec::<f64>::ball([0.0; 3], 2.0).unwrap();
        let inner = region(&b, -1.0).unwrap();
        let outer = region(&b, 1.0).unwrap();
        let b1 = DomainSpec::ball([0.0; 3], 1.0).unwrap();
        let b3 = DomainSpec::ball([0.0; 3], 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: [f64; 3] = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let r = norm3(x);
            if (r - 1.0).abs() > 1e-12 {
                assert_eq!(inner.contains(x), b1.contains(x) || r == 1.0);
            }
            if (r - 3.0).abs() > 1e-12 {
                assert_eq!(outer.contains(x), b3.contains(x));
            }
        }
    }

    #[test]
    fn box_erosion_keeps_distance_from_faces() {
        let b = DomainSpec::cuboid([0.0; 3], [4.0, 3.0, 2.0]).unwrap();
        let r = 0.4;
        let ero = region(&b, -r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut accepted = 0;
        for _ in 0..5000 {
            let x = [rng.gen_range(0.0..4.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..2.0)];
            if ero.contains(x) {
                accepted += 1;
                let hi = [4.0, 3.0, 2.0];
                for a in 0..3 {
                    assert!(x[a] >= r - 1e-12 && hi[a] - x[a] >= r - 1e-12);
                }
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn erosion_past_inradius_fails() {
        let b = DomainSpec::ball([0.0; 3], 1.0).unwrap();
        assert!(matches!(region(&b, -1.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn scaling_composes() {
        let t = DomainSpec::solid_torus(2.0, 0.5).unwrap();
        let a = scale_domain(&scale_domain(&t, 1.5).unwrap(), 2.0).unwrap();
        let b = scale_domain(&t, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-2.0..2.0)];
            assert_eq!(a.contains(x), b.contains(x));
        }
    }

    #[test]
    fn json_field_names() {
        let b = DomainSpec::ball([0.0, 1.0, 0.0], 2.0).unwrap();
        let v = serde_json::to_value(&b).unwrap();
        assert_eq!(v["kind"], "ball");
        assert_eq!(v["radius"], 2.0);
        assert_eq!(v["scale"], 1.0);
        let t: DomainSpec<f64> = serde_json::from_str(r#"{"kind":"solid_torus","major":2,"minor":0.5}"#).unwrap();
        assert_eq!(t.scale, 1.0);
        let a: DomainSpec<f64> =
            serde_json::from_str(r#"{"kind":"annulus","center":[0,0,0],"inner":1,"outer":8,"scale":2}"#).unwrap();
        assert_eq!(a.inradius(), 7.0);
    }
}
