//! Harmonic extension, the classical double-obstacle problem, and the harmonic
//! enlargement of the obstacles onto a collar `D_δ` around `D`.

use crate::domain::{DomainMasks, DomainSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::obstacles::ObstaclePair;

use super::kernel::{check_reaches_boundary, extent_of, max_residual, psor, sor_omega};

const MAX_SWEEPS: usize = 2_000_000;

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub u: ScalarField,
    /// Max `|Δ_h u|` over region nodes not touching an obstacle.
    pub residual: f64,
    pub sweeps: usize,
}

fn region_nodes(region: &[bool]) -> Vec<usize> {
    region.iter().enumerate().filter(|(_, r)| **r).map(|(k, _)| k).collect()
}

/// Discrete-harmonic fill-in of `boundary_data` over `region`; values off the region
/// are held fixed. Iterates until the unscaled residual drops below `1e-10 · max|data|`.
pub fn harmonic_extension(region: &[bool], boundary_data: &ScalarField) -> Result<EllipticSolution> {
    harmonic_extension_to(region, boundary_data, 1e-10)
}

pub(crate) fn harmonic_extension_to(
    region: &[bool],
    boundary_data: &ScalarField,
    rel_tol: f64,
) -> Result<EllipticSolution> {
    let grid = *boundary_data.grid();
    if region.len() != grid.len() {
        return Err(Error::InvalidParameter("region mask does not match grid".into()));
    }
    check_reaches_boundary(&grid, region)?;
    let nodes = region_nodes(region);
    let scale = boundary_data
        .values()
        .iter()
        .zip(region)
        .filter(|(_, r)| !**r)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let lo = vec![f64::NEG_INFINITY; grid.len()];
    let hi = vec![f64::INFINITY; grid.len()];
    let mut u = boundary_data.values().to_vec();
    // start from the mean of the data so interior values are in range
    let start = boundary_data.values().iter().zip(region).filter(|(_, r)| !**r).map(|(v, _)| *v).sum::<f64>()
        / (grid.len() - nodes.len()).max(1) as f64;
    for &k in &nodes {
        u[k] = start;
    }
    let omega = sor_omega(grid.h, extent_of(&grid, &nodes));
    let target = rel_tol * scale;
    let mut sweeps = 0;
    loop {
        let stats = psor(&grid, &mut u, &nodes, &lo, &hi, omega, 0.1 * target, 200);
        sweeps += stats.sweeps;
        let res = max_residual(&grid, &u, nodes.iter().copied());
        if res <= target || sweeps >= MAX_SWEEPS {
            if res > target {
                return Err(Error::NotConverged(format!("harmonic extension residual {res:e} after {sweeps} sweeps")));
            }
            let residual = res / (grid.h * grid.h);
            return Ok(EllipticSolution { u: ScalarField::from_values(grid, u)?, residual, sweeps });
        }
    }
}

/// Projected SOR for `min E(u)` with `φ ≤ u ≤ ψ` on `region` and `u = boundary_data` elsewhere.
pub fn solve_double_obstacle(
    region: &[bool],
    phi: &ScalarField,
    psi: &ScalarField,
    boundary_data: &ScalarField,
) -> Result<EllipticSolution> {
    let grid = *boundary_data.grid();
    if region.len() != grid.len() || !phi.grid().same_lattice(&grid) || !psi.grid().same_lattice(&grid) {
        return Err(Error::InvalidParameter("region, obstacles and data must share one grid".into()));
    }
    let nodes = region_nodes(region);
    for &k in &nodes {
        if phi.values()[k] > psi.values()[k] {
            let (i, j) = grid.ij(k);
            return Err(Error::InvalidObstacles(format!(
                "infeasible obstacles at ({i}, {j}): phi = {} > psi = {}",
                phi.values()[k],
                psi.values()[k]
            )));
        }
    }
    check_reaches_boundary(&grid, region)?;
    let lo = phi.values();
    let hi = psi.values();
    let mut u = boundary_data.values().to_vec();
    for &k in &nodes {
        u[k] = u[k].clamp(lo[k], hi[k]);
    }
    let scale = u.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let omega = sor_omega(grid.h, extent_of(&grid, &nodes));
    let stats = psor(&grid, &mut u, &nodes, lo, hi, omega, 1e-15 * scale, MAX_SWEEPS);
    if !stats.converged {
        return Err(Error::NotConverged(format!(
            "double-obstacle PSOR stalled at change {:e}",
            stats.last_change
        )));
    }
    let band = 1e-12 * scale;
    let free = nodes.iter().copied().filter(|&k| u[k] > lo[k] + band && u[k] < hi[k] - band);
    let residual = max_residual(&grid, &u, free) / (grid.h * grid.h);
    Ok(EllipticSolution { u: ScalarField::from_values(grid, u)?, residual, sweeps: stats.sweeps })
}

/// Obstacles enlarged harmonically onto the collar `D_δ \ D̄`.
#[derive(Debug, Clone)]
pub struct ExtendedObstacles {
    pub phi: ScalarField,
    pub psi: ScalarField,
    /// Nodes of `D_δ \ D̄`.
    pub collar: Vec<bool>,
    /// Nodes of `D_δ` (collar plus `D`).
    pub region: Vec<bool>,
}

impl ExtendedObstacles {
    /// Largest violation of `φ_ε ≤ u ≤ ψ_ε` over `D_δ`.
    pub fn bracket_violation(&self, u: &ScalarField) -> f64 {
        (0..u.values().len())
            .filter(|&k| self.region[k])
            .map(|k| {
                let v = u.values()[k];
                (self.phi.values()[k] - v).max(v - self.psi.values()[k]).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Nodes of `Ω_R` within distance `delta` of `D`.
pub fn collar_mask(spec: &DomainSpec, masks: &DomainMasks, delta: f64) -> Vec<bool> {
    let g = masks.grid();
    (0..g.len())
        .map(|k| masks.is_omega(k) && spec.distance_to_d(g.point(k)) < delta)
        .collect()
}

/// Harmonic enlargement of `φ`, `ψ` onto `D_δ`: obstacle values on `D`, `u_current` on `∂D_δ`.
pub fn extend_obstacles(
    spec: &DomainSpec,
    masks: &DomainMasks,
    obstacles: &ObstaclePair,
    u_current: &ScalarField,
    delta: f64,
    pos_threshold: f64,
) -> Result<ExtendedObstacles> {
    let g: Grid = *masks.grid();
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("delta must be positive".into()));
    }
    let collar = collar_mask(spec, masks, delta);
    let mut ring = vec![false; g.len()];
    for k in 0..g.len() {
        if collar[k] {
            g.for_each_neighbor(k, |m| {
                if !collar[m] && !masks.is_d(m) {
                    ring[m] = true;
                }
            });
        }
    }
    for k in 0..g.len() {
        if (collar[k] || ring[k]) && masks.is_outside(k) {
            return Err(Error::InvalidParameter("collar D_delta reaches beyond B_R".into()));
        }
    }
    for k in 0..g.len() {
        if (collar[k] || ring[k]) && u_current.values()[k] <= pos_threshold {
            let (i, j) = g.ij(k);
            return Err(Error::ClearanceViolated { i, j, value: u_current.values()[k] });
        }
    }
    let extend = |obstacle: &ScalarField| -> Result<ScalarField> {
        let mut data = u_current.clone();
        for k in masks.d_nodes() {
            data.values_mut()[k] = obstacle.values()[k];
        }
        harmonic_extension(&collar, &data).map(|s| s.u)
    };
    let mut phi = extend(&obstacles.phi)?;
    let mut psi = extend(&obstacles.psi)?;
    let region: Vec<bool> = (0..g.len()).map(|k| collar[k] || masks.is_d(k)).collect();
    for k in 0..g.len() {
        if !region[k] {
            phi.values_mut()[k] = 0.0;
            psi.values_mut()[k] = 0.0;
        }
    }
    Ok(ExtendedObstacles { phi, psi, collar, region })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(n: usize) -> (Grid, Vec<bool>) {
        let h = 1.0 / (n - 1) as f64;
        let g = Grid::new(n, n, h, [0.0, 0.0]).unwrap();
        let region = (0..g.len())
            .map(|k| {
                let (i, j) = g.ij(k);
                i > 0 && j > 0 && i + 1 < n && j + 1 < n
            })
            .collect();
        (g, region)
    }

    #[test]
    fn constant_data_extends_to_constant() {
        let (g, region) = unit_square(17);
        let s = harmonic_extension(&region, &ScalarField::constant(g, 2.5)).unwrap();
        assert!(s.u.values().iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn linear_data_is_reproduced() {
        let (g, region) = unit_square(21);
        let data = ScalarField::from_fn(g, |x, _| x);
        let s = harmonic_extension(&region, &data).unwrap();
        for k in 0..g.len() {
            assert!((s.u.values()[k] - g.point(k)[0]).abs() < 1e-9);
        }
        let big = ScalarField::constant(g, 1e6);
        let obs = solve_double_obstacle(&region, &ScalarField::constant(g, -1e6), &big, &data).unwrap();
        for k in 0..g.len() {
            assert!((obs.u.values()[k] - g.point(k)[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn coincident_obstacles_pin_the_solution() {
        let (g, region) = unit_square(11);
        let c = ScalarField::constant(g, 0.7);
        let s = solve_double_obstacle(&region, &c, &c, &c).unwrap();
        assert!(s.u.values().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn infeasible_obstacles_rejected() {
        let (g, region) = unit_square(7);
        let err = solve_double_obstacle(
            &region,
            &ScalarField::constant(g, 1.0),
            &ScalarField::constant(g, 0.0),
            &ScalarField::zeros(g),
        );
        assert!(matches!(err, Err(Error::InvalidObstacles(_))));
    }

    #[test]
    fn disconnected_region_rejected() {
        let g = Grid::new(6, 6, 1.0, [0.0, 0.0]).unwrap();
        assert!(matches!(
            harmonic_extension(&[true; 36], &ScalarField::zeros(g)),
            Err(Error::UnreachableBoundary { .. })
        ));
    }
}
