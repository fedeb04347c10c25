//! Masked cell-centred grids, fields living on them and midpoint quadrature.
//!
//! A cell belongs to the domain when its centre passes the membership test of
//! the [`DomainSpec`]; masked-out cells carry the homogeneous Dirichlet value.
//! Membership is therefore resolved to O(h). Links from a boundary cell to a
//! masked-out neighbour are closed at the analytic wall: a link whose in-domain
//! fraction is `θ` gets the coupling `1/θ` instead of `1`, which keeps the
//! operator symmetric and 7-point while placing the zero at the wall.

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

/// Sentinel for "neighbour is outside the mask".
pub const OUTSIDE: u32 = u32::MAX;

/// Smallest in-domain fraction of a wall link; bounds the wall coupling.
pub const THETA_MIN: f64 = 0.05;

/// Default per-axis cell cap, overridable through `SPLAB_CELL_CAP`.
pub const DEFAULT_CELL_CAP: usize = 192;

pub fn cell_cap() -> usize {
    std::env::var("SPLAB_CELL_CAP")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&c: &usize| c > 0)
        .unwrap_or(DEFAULT_CELL_CAP)
}

#[derive(Clone, Debug)]
pub struct Grid<T: Real> {
    pub spec: DomainSpec<T>,
    /// Cell edge length.
    pub h: T,
    /// Lower corner of cell `(0, 0, 0)`.
    pub origin: Vec3<T>,
    pub dims: [usize; 3],
    /// Mask over all `dims` cells.
    pub mask: Vec<bool>,
    /// Masked index of each cell, or [`OUTSIDE`].
    index: Vec<u32>,
    /// Integer coordinates of masked-in cells, in x-fastest order.
    cells: Vec<[u32; 3]>,
    /// Masked neighbours in order -x, +x, -y, +y, -z, +z.
    neighbors: Vec<[u32; 6]>,
    /// Masked-in cells with at least one masked-out neighbour.
    pub boundary: Vec<bool>,
    /// Slot in `walls` of each boundary cell, or [`OUTSIDE`].
    wall_slot: Vec<u32>,
    /// Wall couplings `1/θ` per direction (zero on links to masked cells).
    walls: Vec<[T; 6]>,
}

impl<T: Real> Grid<T> {
    /// Number of masked-in cells (unknowns).
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_volume(&self) -> T {
        self.h * self.h * self.h
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Centre of the cell with integer coordinates `ijk`.
    #[inline]
    pub fn cell_center(&self, ijk: [u32; 3]) -> Vec3<T> {
        let half = T::lit(0.5);
        [
            self.origin[0] + (T::from_usize_lossy(ijk[0] as usize) + half) * self.h,
            self.origin[1] + (T::from_usize_lossy(ijk[1] as usize) + half) * self.h,
            self.origin[2] + (T::from_usize_lossy(ijk[2] as usize) + half) * self.h,
        ]
    }

    /// Centre of masked cell number `m`.
    #[inline]
    pub fn center(&self, m: usize) -> Vec3<T> {
        self.cell_center(self.cells[m])
    }

    #[inline]
    pub fn coords(&self, m: usize) -> [u32; 3] {
        self.cells[m]
    }

    #[inline]
    pub fn neighbors(&self, m: usize) -> &[u32; 6] {
        &self.neighbors[m]
    }

    /// Masked index of the cell at integer coordinates, if inside the array and mask.
    pub fn masked_index(&self, i: i64, j: i64, k: i64) -> Option<usize> {
        if i < 0 || j < 0 || k < 0 {
            return None;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
            return None;
        }
        let m = self.index[self.linear(i, j, k)];
        (m != OUTSIDE).then_some(m as usize)
    }

    /// Masked cell whose centre is closest to `x`, if that cell is masked in.
    pub fn locate(&self, x: Vec3<T>) -> Option<usize> {
        let mut ijk = [0i64; 3];
        for a in 0..3 {
            let t = ((x[a] - self.origin[a]) / self.h).floor();
            ijk[a] = t.to_i64()?;
        }
        self.masked_index(ijk[0], ijk[1], ijk[2])
    }

    /// Evaluates `f` at every masked-in cell centre.
    pub fn sample(&self, mut f: impl FnMut(Vec3<T>) -> T) -> ScalarField<T> {
        ScalarField::new((0..self.len()).map(|m| f(self.center(m))).collect())
    }

    pub fn zeros(&self) -> ScalarField<T> {
        ScalarField::new(vec![T::zero(); self.len()])
    }

    /// Distance from `x` to the analytic boundary (negative outside).
    pub fn depth(&self, x: Vec3<T>) -> T {
        -self.spec.signed_distance(x)
    }

    /// Wall couplings of cell `m` (one per direction, zero where the
    /// neighbour is masked in), or `None` for interior cells.
    #[inline]
    pub fn walls(&self, m: usize) -> Option<&[T; 6]> {
        match self.wall_slot[m] {
            OUTSIDE => None,
            s => Some(&self.walls[s as usize]),
        }
    }

    /// Diagonal of `h² (-Δ_h)` at cell `m`.
    pub fn diagonal(&self, m: usize) -> T {
        match self.walls(m) {
            None => T::lit(6.0),
            Some(w) => {
                let links = self.neighbors[m].iter().filter(|&&n| n != OUTSIDE).count();
                T::from_usize_lossy(links) + w.iter().copied().sum::<T>()
            }
        }
    }

    /// Applies the 7-point operator `-Δ_h` with the zero Dirichlet value placed
    /// at the wall crossing of every outgoing link.
    pub fn neg_laplacian(&self, u: &[T], out: &mut [T]) {
        let inv_h2 = T::one() / (self.h * self.h);
        let six = T::lit(6.0);
        for (m, nb) in self.neighbors.iter().enumerate() {
            let um = u[m];
            let s = match self.walls(m) {
                None => {
                    let mut s = six * um;
                    for &n in nb {
                        s -= u[n as usize];
                    }
                    s
                }
                Some(w) => {
                    let mut s = T::zero();
                    for (d, &n) in nb.iter().enumerate() {
                        if n == OUTSIDE {
                            s += w[d] * um;
                        } else {
                            s += um - u[n as usize];
                        }
                    }
                    s
                }
            };
            out[m] = s * inv_h2;
        }
    }

    /// Point where the link of cell `m` in direction `dir` crosses the wall.
    pub fn wall_point(&self, m: usize, dir: usize) -> Option<Vec3<T>> {
        let w = self.walls(m)?[dir];
        if w == T::zero() {
            return None;
        }
        let mut x = self.center(m);
        let step = self.h / w;
        x[dir / 2] += if dir % 2 == 0 { -step } else { step };
        Some(x)
    }

    /// Integer coordinates of every masked-out cell adjacent to the mask,
    /// including those one step beyond the array bounds.
    pub fn exterior_layer(&self) -> Vec<[i64; 3]> {
        let mut layer = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (m, nb) in self.neighbors.iter().enumerate() {
            if !self.boundary[m] {
                continue;
            }
            let c = self.cells[m];
            for (dir, &n) in nb.iter().enumerate() {
                if n == OUTSIDE {
                    let mut q = [c[0] as i64, c[1] as i64, c[2] as i64];
                    q[dir / 2] += if dir % 2 == 0 { -1 } else { 1 };
                    if seen.insert(q) {
                        layer.push(q);
                    }
                }
            }
        }
        layer.sort();
        layer
    }

    /// Centre of a cell given by possibly out-of-range integer coordinates.
    pub fn center_of(&self, q: [i64; 3]) -> Vec3<T> {
        let half = T::lit(0.5);
        let f = |a: usize| self.origin[a] + (T::from_i64(q[a]).unwrap() + half) * self.h;
        [f(0), f(1), f(2)]
    }
}

/// Builds a masked grid covering `spec` with `pad_cells` exterior layers.
pub fn build_grid<T: Real>(spec: &DomainSpec<T>, cells_per_unit: T, pad_cells: usize) -> Result<Grid<T>> {
    build_grid_with_cap(spec, cells_per_unit, pad_cells, cell_cap())
}

pub fn build_grid_with_cap<T: Real>(
    spec: &DomainSpec<T>,
    cells_per_unit: T,
    pad_cells: usize,
    cap: usize,
) -> Result<Grid<T>> {
    spec.validate()?;
    if !(cells_per_unit > T::zero()) || !cells_per_unit.is_finite() {
        return Err(Error::Domain(format!("cells_per_unit must be positive, got {cells_per_unit}")));
    }
    let h = T::one() / cells_per_unit;
    let (lo, hi) = spec.bounding_box();
    let mut dims = [0usize; 3];
    let mut origin = [T::zero(); 3];
    for a in 0..3 {
        let extent = hi[a] - lo[a];
        let n_inner = (extent / h - T::lit(1e-9)).ceil().to_usize().unwrap_or(usize::MAX).max(1);
        let n = n_inner.saturating_add(2 * pad_cells);
        if n > cap {
            return Err(Error::Resource(format!(
                "axis {} needs {} cells (cap {}); lower cells_per_unit or raise SPLAB_CELL_CAP",
                ["x", "y", "z"][a],
                n,
                cap
            )));
        }
        let slack = T::from_usize_lossy(n_inner) * h - extent;
        origin[a] = lo[a] - slack / T::lit(2.0) - T::from_usize_lossy(pad_cells) * h;
        dims[a] = n;
    }
    assemble(spec, h, origin, dims)
}

/// Builds a grid for `spec` whose cells coincide with the cell lattice of
/// `like` (same `h`, origin shifted by whole cells).
pub fn build_grid_aligned<T: Real>(spec: &DomainSpec<T>, like: &Grid<T>, pad_cells: usize) -> Result<Grid<T>> {
    spec.validate()?;
    let h = like.h;
    let cap = cell_cap();
    let (lo, hi) = spec.bounding_box();
    let mut dims = [0usize; 3];
    let mut origin = [T::zero(); 3];
    let pad = T::from_usize_lossy(pad_cells);
    for a in 0..3 {
        let first = ((lo[a] - like.origin[a]) / h).floor() - pad;
        let last = ((hi[a] - like.origin[a]) / h).ceil() + pad;
        let n = (last - first).to_usize().unwrap_or(usize::MAX).max(1);
        if n > cap {
            return Err(Error::Resource(format!(
                "axis {} needs {} cells (cap {}); lower cells_per_unit or raise SPLAB_CELL_CAP",
                ["x", "y", "z"][a],
                n,
                cap
            )));
        }
        origin[a] = like.origin[a] + first * h;
        dims[a] = n;
    }
    assemble(spec, h, origin, dims)
}

fn assemble<T: Real>(spec: &DomainSpec<T>, h: T, origin: Vec3<T>, dims: [usize; 3]) -> Result<Grid<T>> {
    let total = dims[0] * dims[1] * dims[2];
    let mut grid = Grid {
        spec: spec.clone(),
        h,
        origin,
        dims,
        mask: vec![false; total],
        index: vec![OUTSIDE; total],
        cells: Vec::new(),
        neighbors: Vec::new(),
        boundary: Vec::new(),
        wall_slot: Vec::new(),
        walls: Vec::new(),
    };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let ijk = [i as u32, j as u32, k as u32];
                if spec.contains(grid.cell_center(ijk)) {
                    let l = grid.linear(i, j, k);
                    grid.mask[l] = true;
                    grid.index[l] = grid.cells.len() as u32;
                    grid.cells.push(ijk);
                }
            }
        }
    }
    if grid.cells.is_empty() {
        return Err(Error::Geometry(format!(
            "{} has no cell centre inside at h = {}",
            spec.label(),
            h
        )));
    }
    let mut neighbors = Vec::with_capacity(grid.cells.len());
    let mut boundary = Vec::with_capacity(grid.cells.len());
    for c in &grid.cells {
        let (i, j, k) = (c[0] as i64, c[1] as i64, c[2] as i64);
        let pick = |q: Option<usize>| q.map_or(OUTSIDE, |m| m as u32);
        let nb = [
            pick(grid.masked_index(i - 1, j, k)),
            pick(grid.masked_index(i + 1, j, k)),
            pick(grid.masked_index(i, j - 1, k)),
            pick(grid.masked_index(i, j + 1, k)),
            pick(grid.masked_index(i, j, k - 1)),
            pick(grid.masked_index(i, j, k + 1)),
        ];
        boundary.push(nb.iter().any(|&n| n == OUTSIDE));
        neighbors.push(nb);
    }
    let mut wall_slot = vec![OUTSIDE; grid.cells.len()];
    let mut walls = Vec::new();
    for (m, nb) in neighbors.iter().enumerate() {
        if !boundary[m] {
            continue;
        }
        let x = grid.cell_center(grid.cells[m]);
        let mut w = [T::zero(); 6];
        for (d, &n) in nb.iter().enumerate() {
            if n == OUTSIDE {
                let theta = wall_fraction(spec, x, d, h).max(T::lit(THETA_MIN));
                w[d] = T::one() / theta;
            }
        }
        wall_slot[m] = walls.len() as u32;
        walls.push(w);
    }
    grid.neighbors = neighbors;
    grid.boundary = boundary;
    grid.wall_slot = wall_slot;
    grid.walls = walls;
    Ok(grid)
}

/// Fraction of the link from `x` (inside) one step along `dir` that lies in
/// the domain, located by bisection on the signed distance.
fn wall_fraction<T: Real>(spec: &DomainSpec<T>, x: Vec3<T>, dir: usize, h: T) -> T {
    let sign = if dir % 2 == 0 { -T::one() } else { T::one() };
    let at = |t: T| {
        let mut y = x;
        y[dir / 2] += sign * t * h;
        spec.signed_distance(y)
    };
    if at(T::one()) < T::zero() {
        // the far centre is inside the set but was not masked in (array edge)
        return T::one();
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..50 {
        let mid = (lo + hi) / T::lit(2.0);
        if at(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / T::lit(2.0)
}

/// Real values on the masked-in cells of a grid; zero everywhere else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField<T: Real> {
    pub values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, grid: &Grid<T>) -> Result<()> {
        if self.values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "field has {} values but grid has {} masked cells",
                self.values.len(),
                grid.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("field contains non-finite value {v}")));
        }
        Ok(())
    }

    /// `∫ u²` by midpoint quadrature.
    pub fn mass(&self, grid: &Grid<T>) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>() * grid.cell_volume()
    }

    pub fn scaled(&self, t: T) -> Self {
        Self::new(self.values.iter().map(|&v| t * v).collect())
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Midpoint quadrature `Σ f(cell) h³` over masked-in cells.
pub fn integrate<T: Real>(field: &ScalarField<T>, grid: &Grid<T>) -> Result<T> {
    if field.len() != grid.len() {
        return Err(Error::Contract(format!(
            "field has {} values but grid has {} masked cells",
            field.len(),
            grid.len()
        )));
    }
    Ok(field.values.iter().copied().sum::<T>() * grid.cell_volume())
}
