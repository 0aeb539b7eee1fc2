//! Uniform node-centered lattices and the scalar fields that live on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform Cartesian lattice. `ny == 1` marks a 1D grid along x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < 3 || !(ny == 1 || ny >= 3) {
            return Err(Error::GridTooCoarse(format!(
                "need nx >= 3 and ny = 1 or ny >= 3, got {nx} x {ny}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(Self { nx, ny, h, origin })
    }

    pub fn dim(&self) -> usize {
        if self.ny == 1 {
            1
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    /// Weight of one squared edge difference in the Dirichlet sum, `h^(d-2)`.
    pub fn edge_weight(&self) -> f64 {
        self.h.powi(self.dim() as i32 - 2)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.h
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if self.ny == 1 {
            self.origin[1]
        } else {
            self.origin[1] + j as f64 * self.h
        }
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [self.x(i), self.y(j)]
    }

    /// Calls `f` for every lattice neighbor of `idx` (4 in 2D, 2 in 1D).
    #[inline]
    pub fn for_each_neighbor(&self, idx: usize, mut f: impl FnMut(usize)) {
        let (i, j) = self.ij(idx);
        if i > 0 {
            f(idx - 1);
        }
        if i + 1 < self.nx {
            f(idx + 1);
        }
        if self.ny > 1 {
            if j > 0 {
                f(idx - self.nx);
            }
            if j + 1 < self.ny {
                f(idx + self.nx);
            }
        }
    }

    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(4);
        self.for_each_neighbor(idx, |n| out.push(n));
        out
    }

    /// Continuous coordinates to fractional node indices.
    pub fn locate(&self, p: [f64; 2]) -> (f64, f64) {
        let fi = (p[0] - self.origin[0]) / self.h;
        let fj = if self.ny == 1 { 0.0 } else { (p[1] - self.origin[1]) / self.h };
        (fi, fj)
    }

    /// Same lattice (node count, spacing and origin up to round-off).
    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.h - other.h).abs() <= 1e-12 * self.h
            && (self.origin[0] - other.origin[0]).abs() <= 1e-9 * self.h
            && (self.origin[1] - other.origin[1]).abs() <= 1e-9 * self.h
    }
}

/// One real value per grid node, row-major (`y` outer, `x` inner).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Format(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let [x, y] = grid.point(k);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation; points off the lattice clamp to its hull.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let g = &self.grid;
        let (fi, fj) = g.locate(p);
        let fi = fi.clamp(0.0, (g.nx - 1) as f64);
        let i0 = (fi.floor() as usize).min(g.nx - 2);
        let tx = fi - i0 as f64;
        if g.ny == 1 {
            return self.values[i0] * (1.0 - tx) + self.values[i0 + 1] * tx;
        }
        let fj = fj.clamp(0.0, (g.ny - 1) as f64);
        let j0 = (fj.floor() as usize).min(g.ny - 2);
        let ty = fj - j0 as f64;
        let v00 = self.at(i0, j0);
        let v10 = self.at(i0 + 1, j0);
        let v01 = self.at(i0, j0 + 1);
        let v11 = self.at(i0 + 1, j0 + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }

    /// 5-point (3-point in 1D) Laplacian `sum_nb (u_nb - u) / h^2` at one node.
    #[inline]
    pub fn laplacian_at(&self, idx: usize) -> f64 {
        let u = self.values[idx];
        let mut acc = 0.0;
        self.grid.for_each_neighbor(idx, |n| acc += self.values[n] - u);
        acc / (self.grid.h * self.grid.h)
    }

    pub fn laplacian(&self) -> ScalarField {
        let values = (0..self.grid.len()).map(|k| self.laplacian_at(k)).collect();
        ScalarField { grid: self.grid, values }
    }

    /// Central-difference gradient where both neighbors exist, one-sided otherwise.
    pub fn gradient_at(&self, i: usize, j: usize) -> [f64; 2] {
        let g = &self.grid;
        let d = |lo: f64, hi: f64, span: f64| (hi - lo) / (span * g.h);
        let gx = if i == 0 {
            d(self.at(0, j), self.at(1, j), 1.0)
        } else if i + 1 == g.nx {
            d(self.at(i - 1, j), self.at(i, j), 1.0)
        } else {
            d(self.at(i - 1, j), self.at(i + 1, j), 2.0)
        };
        if g.ny == 1 {
            return [gx, 0.0];
        }
        let gy = if j == 0 {
            d(self.at(i, 0), self.at(i, 1), 1.0)
        } else if j + 1 == g.ny {
            d(self.at(i, j - 1), self.at(i, j), 1.0)
        } else {
            d(self.at(i, j - 1), self.at(i, j + 1), 2.0)
        };
        [gx, gy]
    }

    /// Largest forward-difference gradient magnitude over all cells.
    pub fn max_forward_gradient(&self, mut include: impl FnMut(usize) -> bool) -> f64 {
        let g = self.grid;
        let mut best: f64 = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                if !include(k) {
                    continue;
                }
                let gx = if i + 1 < g.nx { (self.values[k + 1] - self.values[k]) / g.h } else { 0.0 };
                let gy = if g.ny > 1 && j + 1 < g.ny {
                    (self.values[k + g.nx] - self.values[k]) / g.h
                } else {
                    0.0
                };
                best = best.max(gx.hypot(gy));
            }
        }
        best
    }
}
