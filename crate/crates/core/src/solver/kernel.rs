//! Projected SOR on the lattice Laplacian, shared by every quadratic sub-solve.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Over-relaxation factor `2 / (1 + sin(π h / L))` for a region of extent `L`.
pub fn sor_omega(h: f64, extent: f64) -> f64 {
    let s = (std::f64::consts::PI * h / extent.max(2.0 * h)).sin();
    (2.0 / (1.0 + s)).min(1.99)
}

/// Extent of the bounding box of `nodes`, padded by one cell.
pub fn extent_of(grid: &Grid, nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return grid.h;
    }
    let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
    for &k in nodes {
        let (i, j) = grid.ij(k);
        i0 = i0.min(i);
        i1 = i1.max(i);
        j0 = j0.min(j);
        j1 = j1.max(j);
    }
    ((i1 - i0).max(j1 - j0) + 2) as f64 * grid.h
}

#[derive(Debug, Clone, Copy)]
pub struct SweepStats {
    pub sweeps: usize,
    pub last_change: f64,
    pub converged: bool,
}

/// Projected SOR for `min Σ_edges (u_a - u_b)²` over `free` nodes with `lo ≤ u ≤ hi`,
/// every other node held at its current value. Stops when a sweep moves no node
/// by more than `tol`.
#[allow(clippy::too_many_arguments)]
pub fn psor(
    grid: &Grid,
    u: &mut [f64],
    free: &[usize],
    lo: &[f64],
    hi: &[f64],
    omega: f64,
    tol: f64,
    max_sweeps: usize,
) -> SweepStats {
    let mut last_change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let mut change: f64 = 0.0;
        for &k in free {
            let mut r = 0.0;
            let mut n = 0.0;
            grid.for_each_neighbor(k, |m| {
                r += u[m];
                n += 1.0;
            });
            let old = u[k];
            let new = (old + omega * (r / n - old)).clamp(lo[k], hi[k]);
            change = change.max((new - old).abs());
            u[k] = new;
        }
        last_change = change;
        if change <= tol {
            return SweepStats { sweeps: sweep, last_change, converged: true };
        }
    }
    SweepStats { sweeps: max_sweeps, last_change, converged: false }
}

/// Largest `|Σ_nb u - n u|` over `nodes` (the unscaled Laplacian residual).
pub fn max_residual(grid: &Grid, u: &[f64], nodes: impl Iterator<Item = usize>) -> f64 {
    nodes
        .map(|k| {
            let mut r = 0.0;
            let mut n = 0.0;
            grid.for_each_neighbor(k, |m| {
                r += u[m];
                n += 1.0;
            });
            (r - n * u[k]).abs()
        })
        .fold(0.0, f64::max)
}

/// Fails with the first region node whose component never touches a non-region node.
pub fn check_reaches_boundary(grid: &Grid, region: &[bool]) -> Result<()> {
    let mut seen = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for k in 0..grid.len() {
        if region[k] {
            let mut touches = false;
            grid.for_each_neighbor(k, |m| touches |= !region[m]);
            if touches {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    while let Some(k) = queue.pop_front() {
        grid.for_each_neighbor(k, |m| {
            if region[m] && !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        });
    }
    if let Some(k) = (0..grid.len()).find(|&k| region[k] && !seen[k]) {
        let (i, j) = grid.ij(k);
        return Err(Error::UnreachableBoundary { i, j });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_stays_in_open_interval() {
        let w = sor_omega(0.01, 8.0);
        assert!(w > 1.9 && w < 2.0);
        assert!(sor_omega(1.0, 1.0) >= 1.0);
    }

    #[test]
    fn psor_clamps_to_box() {
        let g = Grid::new(5, 1, 1.0, [0.0, 0.0]).unwrap();
        let mut u = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        let lo = vec![0.0, 0.0, 0.6, 0.0, 0.0];
        let hi = vec![1.0; 5];
        psor(&g, &mut u, &[1, 2, 3], &lo, &hi, 1.0, 1e-14, 10_000);
        assert!(u[2] >= 0.6);
        assert!((u[1] - 0.3).abs() < 1e-10);
        assert!((u[3] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn region_without_boundary_data_is_rejected() {
        let g = Grid::new(5, 5, 1.0, [0.0, 0.0]).unwrap();
        assert!(check_reaches_boundary(&g, &[true; 25]).is_err());
        let mut region = vec![true; 25];
        region[0] = false;
        assert!(check_reaches_boundary(&g, &region).is_ok());
    }
}
