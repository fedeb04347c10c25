//! Dirichlet Poisson solves on masked grids, the first Dirichlet eigenvalue
//! and radial potentials.
//!
//! The 3D operator is the 7-point `-Δ_h` of [`Grid::neg_laplacian`], which is
//! symmetric positive definite, so every solve is a Jacobi preconditioned
//! conjugate gradient with sequential (deterministic) reductions.

pub mod radial;

pub use radial::{newton_potential_radial, poisson_dirichlet_radial, RadialField};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::scalar::Real;

/// Default relative residual of Poisson solves.
pub const POISSON_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Preconditioned conjugate gradients for an SPD operator.
///
/// `x` holds the initial guess on entry and the solution on exit. The
/// preconditioner is the Jacobi scaling `diag_inv` (inverse diagonal).
pub fn conjugate_gradient<T: Real>(
    mut apply: impl FnMut(&[T], &mut [T]),
    diag_inv: &[T],
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgStats::default());
    }
    let mut r = vec![T::zero(); n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<T> = r.iter().zip(diag_inv).map(|(&v, &d)| v * d).collect();
    let mut p = z.clone();
    let mut ap = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    let mut rel = (dot(&r, &r).sqrt() / bnorm).as_f64();
    for it in 0..max_iter {
        if rel <= tol.as_f64() {
            return Ok(CgStats { iterations: it, relative_residual: rel });
        }
        history.push(rel);
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * diag_inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = (dot(&r, &r).sqrt() / bnorm).as_f64();
    }
    if rel <= tol.as_f64() {
        return Ok(CgStats { iterations: max_iter, relative_residual: rel });
    }
    Err(Error::NotConverged { solver: "conjugate gradient", iterations: history.len(), last: rel, history })
}

/// Inverse diagonal of `-Δ_h + shift`.
pub fn jacobi<T: Real>(grid: &Grid<T>, shift: T) -> Vec<T> {
    let inv_h2 = T::one() / (grid.h * grid.h);
    (0..grid.len()).map(|m| T::one() / (grid.diagonal(m) * inv_h2 + shift)).collect()
}

pub(crate) fn cg_iteration_cap<T: Real>(grid: &Grid<T>) -> usize {
    20 * (grid.dims[0] + grid.dims[1] + grid.dims[2]) + 500
}

/// Solves `-Δ_h φ = source` with `φ = 0` outside the mask.
pub fn poisson_dirichlet<T: Real>(source: &ScalarField<T>, grid: &Grid<T>, tol: T) -> Result<ScalarField<T>> {
    let mut phi = vec![T::zero(); grid.len()];
    poisson_dirichlet_into(source, grid, tol, &mut phi)?;
    Ok(ScalarField::new(phi))
}

/// Same as [`poisson_dirichlet`] but starts from (and overwrites) `phi`.
pub fn poisson_dirichlet_into<T: Real>(
    source: &ScalarField<T>,
    grid: &Grid<T>,
    tol: T,
    phi: &mut [T],
) -> Result<CgStats> {
    source.check(grid)?;
    if !(tol > T::zero()) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    if phi.len() != grid.len() {
        return Err(Error::Contract("initial guess has the wrong length".into()));
    }
    let diag_inv = jacobi(grid, T::zero());
    conjugate_gradient(|x, y| grid.neg_laplacian(x, y), &diag_inv, &source.values, phi, tol, cg_iteration_cap(grid))
}

/// Solves `(-Δ_h + shift) z = rhs`; used as the Sobolev preconditioner.
pub fn shifted_solve<T: Real>(grid: &Grid<T>, shift: T, rhs: &[T], z: &mut [T], tol: T, max_iter: usize) -> Result<CgStats> {
    let diag_inv = jacobi(grid, shift);
    let res = conjugate_gradient(
        |x, y| {
            grid.neg_laplacian(x, y);
            for i in 0..y.len() {
                y[i] += shift * x[i];
            }
        },
        &diag_inv,
        rhs,
        z,
        tol,
        max_iter,
    );
    match res {
        // An inexact preconditioner is fine; the caller safeguards descent.
        Err(Error::NotConverged { iterations, last, .. }) => Ok(CgStats { iterations, relative_residual: last }),
        other => other,
    }
}

/// Smallest eigenvalue of `-Δ_h` on the mask and its eigenfield with unit
/// `∫ u² = 1`, by inverse power iteration.
pub fn first_eigenvalue<T: Real>(grid: &Grid<T>, tol: T) -> Result<(T, ScalarField<T>)> {
    if grid.is_empty() {
        return Err(Error::Geometry("empty mask".into()));
    }
    let n = grid.len();
    let eps = T::epsilon() * T::lit(100.0);
    let inner_tol = (tol * T::lit(1e-2)).max(eps);
    // Depth below the boundary is a positive, smooth-ish start vector.
    let mut v: Vec<T> = (0..n).map(|m| grid.depth(grid.center(m)).max(grid.h * T::lit(0.5))).collect();
    normalize(&mut v, grid);
    let mut av = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut mu = T::zero();
    let mut history = Vec::new();
    let diag_inv = jacobi(grid, T::zero());
    for _ in 0..500 {
        grid.neg_laplacian(&v, &mut av);
        mu = dot(&v, &av) / dot(&v, &v);
        let mut res = T::zero();
        for i in 0..n {
            let d = av[i] - mu * v[i];
            res += d * d;
        }
        let rel = res.sqrt() / (mu * dot(&v, &v).sqrt());
        history.push(rel.as_f64());
        if rel <= tol {
            let mut u = v;
            normalize(&mut u, grid);
            return Ok((mu, ScalarField::new(u)));
        }
        for i in 0..n {
            w[i] = v[i] / mu;
        }
        conjugate_gradient(|x, y| grid.neg_laplacian(x, y), &diag_inv, &v, &mut w, inner_tol, cg_iteration_cap(grid))?;
        std::mem::swap(&mut v, &mut w);
        normalize(&mut v, grid);
    }
    let _ = mu;
    Err(Error::NotConverged {
        solver: "inverse power iteration",
        iterations: history.len(),
        last: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

fn normalize<T: Real>(v: &mut [T], grid: &Grid<T>) {
    let m = (dot(v, v) * grid.cell_volume()).sqrt();
    v.iter_mut().for_each(|x| *x /= m);
}
