use proptest::prelude::*;

use splab::domain::{region, scale_domain, DomainSpec};
use splab::elliptic::{poisson_dirichlet, RadialField, POISSON_TOL};
use splab::energy::energy_domain;
use splab::greens::regular_part_ball;
use splab::grid::{build_grid, integrate, ScalarField};
use splab::io::{expand_runs, mask_runs};
use splab::minimize::{minimize_constrained, project_mass, Init, InitPreset, SolverOptions};
use splab::scalings::{exponents, rescale, Direction};
use splab::topology::barycenter;
use splab::{Domain32, Domain64, Grid32, Grid64};

fn small_ball() -> (Domain64, Grid64) {
    let d = DomainSpec::ball([0.1, -0.2, 0.05], 1.0).unwrap();
    let g = build_grid(&d, 6.0, 1).unwrap();
    (d, g)
}

fn field(g: &Grid64, coeffs: &[f64; 4]) -> ScalarField<f64> {
    g.sample(|x| coeffs[0] + coeffs[1] * x[0] + coeffs[2] * x[1] * x[1] + coeffs[3] * (x[2] * 3.0).sin())
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent_and_hits_the_mass(c in prop::array::uniform4(0.1..2.0f64), rho in 0.05..3.0f64) {
        let (_, g) = small_ball();
        let u = field(&g, &c);
        let once = project_mass(&u, &g, rho).unwrap();
        let twice = project_mass(&once, &g, rho).unwrap();
        prop_assert!((once.mass(&g) - rho * rho).abs() <= 1e-12 * rho * rho);
        for (a, b) in once.values.iter().zip(&twice.values) {
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300) * 8.0);
        }
        for (a, b) in u.values.iter().zip(&once.values) {
            prop_assert_eq!(a.signum(), b.signum());
        }
    }

    #[test]
    fn barycenter_ignores_amplitude(c in prop::array::uniform4(0.1..2.0f64), t in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64]) {
        let (_, g) = small_ball();
        let u = field(&g, &c);
        let b = barycenter(&u, &g).unwrap().beta;
        let bt = barycenter(&u.scaled(t), &g).unwrap().beta;
        for a in 0..3 {
            prop_assert!((b[a] - bt[a]).abs() <= 1e-12 * (1.0 + b[a].abs()));
        }
    }

    #[test]
    fn energy_terms_are_homogeneous(c in prop::array::uniform4(0.1..2.0f64), t in 0.2..3.0f64) {
        let (_, g) = small_ball();
        let u = field(&g, &c);
        let e = energy_domain(&u, &g, 2.5).unwrap();
        let et = energy_domain(&u.scaled(t), &g, 2.5).unwrap();
        prop_assert!((et.kinetic - t * t * e.kinetic).abs() <= 1e-10 * et.kinetic);
        prop_assert!((et.nonlocal - t.powi(4) * e.nonlocal).abs() <= 1e-7 * et.nonlocal);
        prop_assert!((et.power - t.powf(2.5) * e.power).abs() <= 1e-10 * et.power);
        prop_assert_eq!(e.total, e.kinetic + e.nonlocal - e.power);
    }

    #[test]
    fn poisson_respects_the_maximum_principle(c in prop::array::uniform4(0.0..2.0f64)) {
        let (_, g) = small_ball();
        let src = field(&g, &c);
        let src = ScalarField::new(src.values.iter().map(|v| v * v).collect());
        let phi = poisson_dirichlet(&src, &g, POISSON_TOL).unwrap();
        prop_assert!(phi.values.iter().all(|&v| v >= -1e-14));
    }

    #[test]
    fn integration_is_linear_and_monotone(c in prop::array::uniform4(-2.0..2.0f64), d in prop::array::uniform4(-2.0..2.0f64), s in -3.0..3.0f64) {
        let (_, g) = small_ball();
        let (u, v) = (field(&g, &c), field(&g, &d));
        let w = ScalarField::new(u.values.iter().zip(&v.values).map(|(a, b)| a + s * b).collect());
        let lhs = integrate(&w, &g).unwrap();
        let rhs = integrate(&u, &g).unwrap() + s * integrate(&v, &g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        let sq = ScalarField::new(u.values.iter().map(|a| a * a).collect());
        prop_assert!(integrate(&sq, &g).unwrap() >= 0.0);
    }

    #[test]
    fn dilations_compose(l1 in 1.0..4.0f64, l2 in 1.0..4.0f64, x in point()) {
        let d = DomainSpec::annulus([0.5, 0.0, -0.25], 0.5, 1.5).unwrap();
        let a = scale_domain(&scale_domain(&d, l1).unwrap(), l2).unwrap();
        let b = scale_domain(&d, l1 * l2).unwrap();
        let y = x.map(|v| v * l1 * l2 / 2.0);
        prop_assert_eq!(a.contains(y), b.contains(y));
    }

    #[test]
    fn erosion_and_dilation_nest(r in 0.05..0.9f64, x in point()) {
        let d = DomainSpec::cuboid([-1.0, -1.0, -1.0], [1.0, 1.0, 2.0]).unwrap();
        let inner = region(&d, -r).unwrap();
        let outer = region(&d, r).unwrap();
        if inner.contains(x) {
            prop_assert!(d.contains(x));
        }
        if d.contains(x) {
            prop_assert!(outer.contains(x));
        }
    }

    #[test]
    fn regular_part_is_symmetric_and_scales(x in prop::array::uniform3(-0.5..0.5f64), y in prop::array::uniform3(-0.5..0.5f64), lam in 1.0..6.0f64) {
        let c = [0.0; 3];
        let hxy = regular_part_ball(x, y, 1.0, c).unwrap();
        let hyx = regular_part_ball(y, x, 1.0, c).unwrap();
        prop_assert!((hxy - hyx).abs() <= 1e-12 * hxy);
        let hl = regular_part_ball(x.map(|v| v * lam), y.map(|v| v * lam), lam, c).unwrap();
        prop_assert!((hl - hxy / lam).abs() <= 1e-12 * hxy);
        prop_assert!(regular_part_ball(x, y, 2.0, c).unwrap() < hxy);
    }

    #[test]
    fn exponents_preserve_mass(p in 2.001..2.999f64) {
        let e = exponents(p).unwrap();
        prop_assert!((2.0 * e.a_u - 3.0 * e.b_x - 2.0).abs() < 1e-12);
        prop_assert!(e.alpha > 0.0 && e.gamma > 0.0);
    }

    #[test]
    fn rescaling_round_trips(rho in 0.05..2.0f64, p in 2.05..2.95f64, width in 0.5..3.0f64) {
        let v = RadialField::from_fn(20.0, 400, |r| (-(r * r) / (width * width)).exp()).unwrap();
        let w = rescale(&v, rho, p, Direction::VToW).unwrap();
        let back = rescale(&w, rho, p, Direction::WToV).unwrap();
        prop_assert!((back.h - v.h).abs() <= 1e-12 * v.h);
        for (a, b) in v.values.iter().zip(&back.values) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mask_runs_round_trip(mask in prop::collection::vec(any::<bool>(), 0..200)) {
        let runs = mask_runs(&mask);
        prop_assert_eq!(expand_runs(&runs), mask.clone());
        prop_assert_eq!(runs.iter().sum::<usize>(), mask.len());
        prop_assert!(runs.iter().skip(1).all(|&n| n > 0));
    }
}

#[test]
fn single_precision_solve_tracks_double_precision() {
    let d32: Domain32 = DomainSpec::ball([0.0; 3], 2.0).unwrap();
    let d64: Domain64 = d32.cast();
    let g32: Grid32 = build_grid(&d32, 4.0, 1).unwrap();
    let g64: Grid64 = build_grid(&d64, 4.0, 1).unwrap();
    assert_eq!(g32.mask, g64.mask);
    let o32 = SolverOptions { grad_tol: 1e-3, ..SolverOptions::default() };
    let o64 = SolverOptions { grad_tol: 1e-6, ..SolverOptions::default() };
    let r32 = minimize_constrained(&g32, 2.5f32, 0.5f32, &Init::Preset(InitPreset::default()), &o32).unwrap();
    let r64 = minimize_constrained(&g64, 2.5, 0.5, &Init::Preset(InitPreset::default()), &o64).unwrap();
    let rel = (r32.energy.total as f64 - r64.energy.total).abs() / r64.energy.total.abs();
    assert!(rel < 1e-3, "f32 {} vs f64 {}", r32.energy.total, r64.energy.total);
}
