//! Discrete Dirichlet energy, the volume penalty `f_ε`, exact and ramp-smoothed
//! positivity measures, and the gradient of the smoothed penalized functional.
//!
//! The Dirichlet sum runs over lattice edges with forward differences,
//! `E(u) = Σ_edges ((u_a - u_b) / h)² h^d`, so its gradient is exactly
//! `-2 h^d Δ_h u` for the graph Laplacian of the lattice.

use serde::{Deserialize, Serialize};

use crate::domain::DomainMasks;
use crate::error::{Error, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub eps: f64,
    pub mu: f64,
    /// Width of the positivity ramp `H_τ`.
    pub tau: f64,
    /// Nodes with `u > pos_threshold` count as positive.
    pub pos_threshold: f64,
}

impl PenaltyParams {
    /// Threshold defaults to `1e-8 sup φ`, the ramp to `sup φ / 8`.
    pub fn new(eps: f64, mu: f64, sup_phi: f64) -> Result<Self> {
        let p = Self { eps, mu, tau: sup_phi / 8.0, pos_threshold: 1e-8 * sup_phi };
        p.validate()?;
        Ok(p)
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.pos_threshold.is_finite() && self.pos_threshold >= 0.0) {
            return Err(Error::InvalidParameter("pos_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Volume penalty: slope `ε` below `μ`, slope `1/ε` above.
#[inline]
pub fn f_eps(t: f64, p: &PenaltyParams) -> f64 {
    if t <= p.mu {
        p.eps * (t - p.mu)
    } else {
        (t - p.mu) / p.eps
    }
}

/// One-sided slope of `f_ε`: the left slope at the kink.
#[inline]
pub fn f_eps_slope(t: f64, p: &PenaltyParams) -> f64 {
    if t <= p.mu {
        p.eps
    } else {
        1.0 / p.eps
    }
}

/// Clipped linear ramp `H_τ(s) = clamp(s/τ, 0, 1)`.
#[inline]
pub fn ramp(s: f64, tau: f64) -> f64 {
    (s / tau).clamp(0.0, 1.0)
}

/// `H_τ'`, taken as zero at both kinks.
#[inline]
pub fn ramp_slope(s: f64, tau: f64) -> f64 {
    if s > 0.0 && s < tau {
        1.0 / tau
    } else {
        0.0
    }
}

pub fn dirichlet_energy(u: &ScalarField) -> f64 {
    let g = u.grid();
    let v = u.values();
    let mut acc = 0.0;
    for j in 0..g.ny {
        let row = j * g.nx;
        for i in 0..g.nx - 1 {
            let d = v[row + i + 1] - v[row + i];
            acc += d * d;
        }
        if j + 1 < g.ny {
            for i in 0..g.nx {
                let d = v[row + g.nx + i] - v[row + i];
                acc += d * d;
            }
        }
    }
    acc * g.edge_weight()
}

pub fn positivity_count(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> usize {
    u.values()
        .iter()
        .zip(masks.labels())
        .filter(|(v, c)| c.is_omega() && **v > p.pos_threshold)
        .count()
}

/// `h^d · #{Ω_R nodes with u > pos_threshold}`.
pub fn positivity_volume(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> f64 {
    positivity_count(u, masks, p) as f64 * u.grid().cell_volume()
}

/// `Σ_{Ω_R} H_τ(u) h^d`.
pub fn smoothed_volume(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> f64 {
    let s: f64 = u
        .values()
        .iter()
        .zip(masks.labels())
        .filter(|(_, c)| c.is_omega())
        .map(|(v, _)| ramp(*v, p.tau))
        .sum();
    s * u.grid().cell_volume()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedEnergy {
    pub dirichlet: f64,
    pub volume: f64,
    /// `E(u) + f_ε(volume)`.
    pub penalized: f64,
    pub smoothed_volume: f64,
    /// `E(u) + f_ε(smoothed_volume)`.
    pub smoothed: f64,
}

pub fn penalized_energy(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> PenalizedEnergy {
    let dirichlet = dirichlet_energy(u);
    let volume = positivity_volume(u, masks, p);
    let smoothed_volume = smoothed_volume(u, masks, p);
    PenalizedEnergy {
        dirichlet,
        volume,
        penalized: dirichlet + f_eps(volume, p),
        smoothed_volume,
        smoothed: dirichlet + f_eps(smoothed_volume, p),
    }
}

/// Negative `h^d`-weighted gradient of `E + f_ε(smoothed_volume)`:
/// `2 Δ_h u - f_ε'(V_τ) H_τ'(u)` on `Ω_R`, `2 Δ_h u` on `D`, zero outside `B_R`.
pub fn descent_direction(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> ScalarField {
    let g = *u.grid();
    let slope = f_eps_slope(smoothed_volume(u, masks, p), p);
    let values = (0..g.len())
        .map(|k| {
            let c = masks.class(k);
            if masks.is_outside(k) {
                0.0
            } else if c.is_omega() {
                2.0 * u.laplacian_at(k) - slope * ramp_slope(u.values()[k], p.tau)
            } else {
                2.0 * u.laplacian_at(k)
            }
        })
        .collect();
    ScalarField::from_values(g, values).expect("finite direction")
}

/// `Σ a_k b_k h^d`.
pub fn weighted_dot(a: &ScalarField, b: &ScalarField) -> f64 {
    let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    s * a.grid().cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DomainMasks, NodeClass};
    use crate::grid::Grid;

    fn params(eps: f64, mu: f64) -> PenaltyParams {
        PenaltyParams { eps, mu, tau: 0.1, pos_threshold: 1e-8 }
    }

    #[test]
    fn penalty_branches() {
        let p = params(0.1, 3.0);
        assert_eq!(f_eps(3.0, &p), 0.0);
        assert!((f_eps(2.0, &p) + 0.1).abs() < 1e-15);
        assert!((f_eps(3.5, &p) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_eps_outside_unit_interval() {
        assert!(PenaltyParams::new(1.0, 1.0, 1.0).is_err());
        assert!(PenaltyParams::new(0.0, 1.0, 1.0).is_err());
        assert!(PenaltyParams::new(0.5, -1.0, 1.0).is_err());
    }

    #[test]
    fn one_dimensional_tent_energy() {
        let g = Grid::new(5, 1, 1.0, [0.0, 0.0]).unwrap();
        let u = ScalarField::from_values(g, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(dirichlet_energy(&u), 2.0);
        assert_eq!(dirichlet_energy(&ScalarField::zeros(g)), 0.0);
    }

    fn line_masks(n: usize) -> DomainMasks {
        let g = Grid::new(n, 1, 1.0, [0.0, 0.0]).unwrap();
        let mut labels = vec![NodeClass::Exterior; n];
        labels[0] = NodeClass::Outside;
        labels[n - 1] = NodeClass::Outside;
        labels[1] = NodeClass::Inner;
        DomainMasks::from_labels(g, labels).unwrap()
    }

    #[test]
    fn volumes_count_only_omega() {
        let m = line_masks(8);
        let g = *m.grid();
        let p = params(0.1, 3.0).with_tau(0.5);
        let u = ScalarField::from_values(g, vec![0.0, 2.0, 1.0, 0.5, 0.25, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(positivity_volume(&u, &m, &p), 3.0);
        assert!((smoothed_volume(&u, &m, &p) - 2.5).abs() < 1e-15);
        let single = ScalarField::from_values(g, vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(smoothed_volume(&single, &m, &p), 1.0);
    }

    #[test]
    fn zero_field_penalized_energy() {
        let m = line_masks(8);
        let p = params(0.1, 3.0 * std::f64::consts::PI);
        let e = penalized_energy(&ScalarField::zeros(*m.grid()), &m, &p);
        assert!((e.penalized + 0.3 * std::f64::consts::PI).abs() < 1e-12);
        let d = descent_direction(&ScalarField::zeros(*m.grid()), &m, &p);
        assert!(d.values().iter().all(|v| *v == 0.0));
    }
}
