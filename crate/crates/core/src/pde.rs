//! Finite-volume discretization of `-∇·(u ∇p) = f` on `[-π/2, π/2]^d` with `p = 0` on
//! the boundary, and the forward map from coefficients to observed pressures.
//!
//! Nodes sit at `x_i = h (i - (n + 1) / 2)` for `i = 0..=n+1` along each axis, with
//! `h = π / (n + 1)`; indices `0` and `n + 1` are the boundary. Face permeabilities are
//! harmonic means of the two adjacent nodal values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_in_domain, FieldConfig, FieldEvaluator, DOMAIN_HALF_WIDTH};

const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    /// Interior nodes per axis.
    pub n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::arg(format!("grid dimension {dim} is not 2 or 3")));
        }
        if n < 2 {
            return Err(Error::arg(format!(
                "grid needs at least 2 interior nodes per axis, got {n}"
            )));
        }
        Ok(Grid { dim, n })
    }

    pub fn spacing(&self) -> f64 {
        std::f64::consts::PI / (self.n + 1) as f64
    }

    /// Coordinate of node index `i` in `0..=n+1`. Symmetric: `coord(n+1-i) == -coord(i)`.
    pub fn coord(&self, i: usize) -> f64 {
        self.spacing() * (i as f64 - (self.n + 1) as f64 / 2.0)
    }

    pub fn unknowns(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Node coordinates along one axis, boundary included.
    pub fn closed_axis(&self) -> Vec<f64> {
        (0..self.n + 2).map(|i| self.coord(i)).collect()
    }

    /// Grid with half the spacing: `2n + 1` interior nodes, so every coarse node is a
    /// fine node.
    pub fn refined(&self) -> Grid {
        Grid {
            dim: self.dim,
            n: 2 * self.n + 1,
        }
    }

    /// Interior multi-index (entries `1..=n`) of a flat unknown index.
    pub fn interior_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for c in idx.iter_mut().rev() {
            *c = flat % self.n + 1;
            flat /= self.n;
        }
        idx
    }

    fn interior_flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + (i - 1))
    }

    fn closed_flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * (self.n + 2) + i)
    }

    pub fn interior_points(&self) -> Vec<Vec<f64>> {
        (0..self.unknowns())
            .map(|f| {
                self.interior_index(f)
                    .iter()
                    .map(|&i| self.coord(i))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub location: Vec<f64>,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub sources: Vec<PointSource>,
    /// Standard deviation of the Gaussian that replaces each Dirac.
    pub width: f64,
}

impl SourceSpec {
    /// One unit source at the centre of the domain, mollified over `2h` of `grid`.
    pub fn centered_unit(grid: &Grid) -> Self {
        SourceSpec {
            sources: vec![PointSource {
                location: vec![0.0; grid.dim],
                strength: 1.0,
            }],
            width: 2.0 * grid.spacing(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::arg(format!(
                "mollification width {} must be positive",
                self.width
            )));
        }
        for s in &self.sources {
            if s.location.len() != dim
                || s.location
                    .iter()
                    .any(|x| !x.is_finite() || x.abs() >= DOMAIN_HALF_WIDTH)
            {
                return Err(Error::arg(format!(
                    "source location {:?} is not strictly inside the domain",
                    s.location
                )));
            }
            if !s.strength.is_finite() {
                return Err(Error::arg("source strength must be finite"));
            }
        }
        Ok(())
    }
}

fn gaussian_bumps(grid: &Grid, src: &SourceSpec) -> Vec<Vec<f64>> {
    let w2 = src.width * src.width;
    let norm = (2.0 * std::f64::consts::PI * w2).powf(-(grid.dim as f64) / 2.0);
    let points = grid.interior_points();
    src.sources
        .iter()
        .map(|s| {
            points
                .iter()
                .map(|x| {
                    let r2: f64 = x
                        .iter()
                        .zip(&s.location)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    norm * (-r2 / (2.0 * w2)).exp()
                })
                .collect()
        })
        .collect()
}

/// Raw Gaussian load without mass correction.
#[cfg(test)]
pub(crate) fn gaussian_load(grid: &Grid, src: &SourceSpec) -> Vec<f64> {
    let mut load = vec![0.0; grid.unknowns()];
    for (s, bump) in src.sources.iter().zip(gaussian_bumps(grid, src)) {
        for (l, b) in load.iter_mut().zip(bump) {
            *l += s.strength * b;
        }
    }
    load
}

/// Replaces each `c_i δ_{x_i}` by a Gaussian of standard deviation `width`, rescaled so
/// its discrete mass `Σ load h^d` is exactly `c_i`.
pub fn mollified_source(grid: &Grid, src: &SourceSpec) -> Result<Vec<f64>> {
    src.validate(grid.dim)?;
    let cell = grid.spacing().powi(grid.dim as i32);
    let mut load = vec![0.0; grid.unknowns()];
    for (s, bump) in src.sources.iter().zip(gaussian_bumps(grid, src)) {
        if s.strength == 0.0 {
            continue;
        }
        let mass: f64 = bump.iter().sum::<f64>() * cell;
        if mass <= 0.0 {
            return Err(Error::arg(format!(
                "source at {:?} has no support on the grid",
                s.location
            )));
        }
        let scale = s.strength / mass;
        for (l, b) in load.iter_mut().zip(bump) {
            *l += scale * b;
        }
    }
    Ok(load)
}

/// Symmetric positive definite system in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub size: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSystem {
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (row, out) in y.iter_mut().enumerate() {
            let range = self.row_ptr[row]..self.row_ptr[row + 1];
            *out = self.col_idx[range.clone()]
                .iter()
                .zip(&self.values[range])
                .map(|(&c, v)| v * x[c])
                .sum();
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[range.clone()]
            .iter()
            .position(|&c| c == col)
            .map_or(0.0, |p| self.values[range.start + p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size).map(|r| self.get(r, r)).collect()
    }

    /// `max |A - Aᵀ|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in 0..self.size {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[p];
                worst = worst.max((self.values[p] - self.get(col, row)).abs());
            }
        }
        worst
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Assembles `-∇·(u ∇p)` with Dirichlet rows eliminated.
///
/// `u_nodes` holds the permeability at all `(n + 2)^d` nodes, boundary included,
/// row-major with axis 0 slowest.
pub fn assemble(grid: &Grid, u_nodes: &[f64]) -> Result<SparseSystem> {
    let closed = (grid.n + 2).pow(grid.dim as u32);
    if u_nodes.len() != closed {
        return Err(Error::arg(format!(
            "expected {closed} nodal permeabilities, got {}",
            u_nodes.len()
        )));
    }
    if let Some((i, u)) = u_nodes.iter().enumerate().find(|(_, u)| !(**u > 0.0)) {
        return Err(Error::Precondition(format!(
            "permeability at node {i} is {u}, must be positive"
        )));
    }
    let inv_h2 = 1.0 / grid.spacing().powi(2);
    let size = grid.unknowns();
    let mut row_ptr = Vec::with_capacity(size + 1);
    let mut col_idx = Vec::with_capacity(size * (2 * grid.dim + 1));
    let mut values = Vec::with_capacity(size * (2 * grid.dim + 1));
    row_ptr.push(0);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * grid.dim + 1);
    for row in 0..size {
        let idx = grid.interior_index(row);
        let here = u_nodes[grid.closed_flat(&idx)];
        let mut diag = 0.0;
        entries.clear();
        let mut nb = idx.clone();
        for axis in 0..grid.dim {
            for step in [-1i64, 1] {
                nb[axis] = (idx[axis] as i64 + step) as usize;
                let coef = harmonic_mean(here, u_nodes[grid.closed_flat(&nb)]) * inv_h2;
                diag += coef;
                if (1..=grid.n).contains(&nb[axis]) {
                    entries.push((grid.interior_flat(&nb), -coef));
                }
                nb[axis] = idx[axis];
            }
        }
        entries.push((row, diag));
        entries.sort_by_key(|e| e.0);
        for &(c, v) in &entries {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(SparseSystem {
        size,
        row_ptr,
        col_idx,
        values,
    })
}

/// Pressure at interior nodes; zero on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl PressureField {
    /// Value at a closed-grid multi-index; boundary nodes read as zero.
    pub fn nodal(&self, idx: &[usize]) -> f64 {
        if idx.iter().any(|&i| i == 0 || i == self.grid.n + 1) {
            0.0
        } else {
            self.values[self.grid.interior_flat(idx)]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients to relative residual `1e-10`.
pub fn solve(grid: &Grid, system: &SparseSystem, load: &[f64]) -> Result<PressureField> {
    let n = system.size;
    if load.len() != n || grid.unknowns() != n {
        return Err(Error::arg(format!(
            "load has {} entries, system has {n}",
            load.len()
        )));
    }
    let mut x = vec![0.0; n];
    let b_norm = dot(load, load).sqrt();
    if b_norm == 0.0 {
        return Ok(PressureField {
            grid: *grid,
            values: x,
        });
    }
    let inv_diag: Vec<f64> = system.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = load.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let cap = 10 * n;
    let mut residual = 1.0;
    for _ in 0..cap {
        system.mul_vec(&p, &mut ap);
        let step = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= CG_TOLERANCE {
            return Ok(PressureField {
                grid: *grid,
                values: x,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual,
    })
}

/// Multilinear interpolation weights of one point: `(closed-grid corner, weight)`.
#[derive(Debug, Clone)]
struct Stencil(Vec<(Vec<usize>, f64)>);

fn stencil(grid: &Grid, point: &[f64]) -> Result<Stencil> {
    check_in_domain(point, grid.dim)?;
    let h = grid.spacing();
    let half = (grid.n + 1) as f64 / 2.0;
    let mut base = Vec::with_capacity(grid.dim);
    let mut frac = Vec::with_capacity(grid.dim);
    for &x in point {
        let mut t = x / h + half;
        if (t - t.round()).abs() < 1e-9 {
            t = t.round();
        }
        let i0 = (t.floor().max(0.0) as usize).min(grid.n);
        base.push(i0);
        frac.push((t - i0 as f64).clamp(0.0, 1.0));
    }
    let mut out = Vec::with_capacity(1 << grid.dim);
    for corner in 0..(1usize << grid.dim) {
        let mut idx = base.clone();
        let mut weight = 1.0;
        for axis in 0..grid.dim {
            if corner >> axis & 1 == 1 {
                idx[axis] += 1;
                weight *= frac[axis];
            } else {
                weight *= 1.0 - frac[axis];
            }
        }
        if weight != 0.0 {
            out.push((idx, weight));
        }
    }
    Ok(Stencil(out))
}

impl Stencil {
    fn apply(&self, p: &PressureField) -> f64 {
        self.0.iter().map(|(idx, w)| w * p.nodal(idx)).sum()
    }
}

/// Pressure at arbitrary points by multilinear interpolation of nodal values.
pub fn observe<P: AsRef<[f64]>>(p: &PressureField, obs_points: &[P]) -> Result<Vec<f64>> {
    obs_points
        .iter()
        .map(|x| Ok(stencil(&p.grid, x.as_ref())?.apply(p)))
        .collect()
}

/// Solves the PDE for a coefficient vector and returns the pressure field.
pub fn solve_for_coefficients(
    config: &FieldConfig,
    coeffs: &[f64],
    grid: &Grid,
    src: &SourceSpec,
) -> Result<PressureField> {
    ForwardModel::new(config, grid, src, &[] as &[Vec<f64>])?.pressure(coeffs)
}

/// `G(x; u)` at every observation point.
pub fn forward_map<P: AsRef<[f64]>>(
    config: &FieldConfig,
    coeffs: &[f64],
    grid: &Grid,
    src: &SourceSpec,
    obs_points: &[P],
) -> Result<Vec<f64>> {
    ForwardModel::new(config, grid, src, obs_points)?.evaluate(coeffs)
}

/// Forward map with everything that does not depend on the coefficients precomputed.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    config: FieldConfig,
    grid: Grid,
    evaluator: FieldEvaluator,
    load: Vec<f64>,
    stencils: Vec<Stencil>,
}

impl ForwardModel {
    pub fn new<P: AsRef<[f64]>>(
        config: &FieldConfig,
        grid: &Grid,
        src: &SourceSpec,
        obs_points: &[P],
    ) -> Result<Self> {
        config.validate()?;
        if config.dim != grid.dim {
            return Err(Error::arg(format!(
                "field is {}-dimensional but the grid is {}-dimensional",
                config.dim, grid.dim
            )));
        }
        let evaluator = FieldEvaluator::new(config, &vec![grid.closed_axis(); grid.dim])?;
        let load = mollified_source(grid, src)?;
        let stencils = obs_points
            .iter()
            .map(|x| stencil(grid, x.as_ref()))
            .collect::<Result<_>>()?;
        Ok(ForwardModel {
            config: *config,
            grid: *grid,
            evaluator,
            load,
            stencils,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn observation_count(&self) -> usize {
        self.stencils.len()
    }

    pub fn pressure(&self, coeffs: &[f64]) -> Result<PressureField> {
        let u = self.evaluator.evaluate(coeffs)?;
        let system = assemble(&self.grid, &u)?;
        solve(&self.grid, &system, &self.load)
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if self.stencils.is_empty() {
            return Ok(Vec::new());
        }
        let p = self.pressure(coeffs)?;
        Ok(self.stencils.iter().map(|s| s.apply(&p)).collect())
    }
}
