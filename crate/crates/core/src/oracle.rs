//! Independent ground truth: the closed-form annulus and slab profiles, and an
//! exhaustive minimizer of the discrete `J_ε` on short 1D lines.
//!
//! The radial profile is the minimizer for a disk `D` with constant `φ = c`: among
//! functions vanishing outside a set of fixed area, the capacity of the annulus
//! `a < r < b` is least when the set is the concentric annulus, and the harmonic
//! profile minimizes the energy for that set.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::domain::{DomainMasks, DomainSpec, NodeClass, Shape};
use crate::energy::{f_eps, PenaltyParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::obstacles::ObstaclePair;

/// `u(r) = c ln(b/r) / ln(b/a)` on `a ≤ r ≤ b`, `c` inside, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSolution {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Annulus solution for a disk of radius `a` and exterior area `mu`.
pub fn radial_solution(a: f64, c: f64, mu: f64) -> Result<RadialSolution> {
    if !(a > 0.0 && c > 0.0 && mu > 0.0) || !(a.is_finite() && c.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidParameter("radial solution needs a, c, mu > 0".into()));
    }
    Ok(RadialSolution { a, b: (a * a + mu / PI).sqrt(), c })
}

impl RadialSolution {
    pub fn u(&self, r: f64) -> f64 {
        if r <= self.a {
            self.c
        } else if r >= self.b {
            0.0
        } else {
            self.c * (self.b / r).ln() / (self.b / self.a).ln()
        }
    }

    /// `|u'(r)|` inside the annulus, zero elsewhere.
    pub fn slope(&self, r: f64) -> f64 {
        if r <= self.a || r >= self.b {
            0.0
        } else {
            self.c / (r * (self.b / self.a).ln())
        }
    }

    pub fn energy(&self) -> f64 {
        2.0 * PI * self.c * self.c / (self.b / self.a).ln()
    }

    pub fn volume(&self) -> f64 {
        PI * (self.b * self.b - self.a * self.a)
    }

    /// Gradient jump at the free boundary `r = b`.
    pub fn lambda(&self) -> f64 {
        self.c / (self.b * (self.b / self.a).ln())
    }

    /// Largest slope, attained at `r = a`.
    pub fn max_slope(&self) -> f64 {
        self.c / (self.a * (self.b / self.a).ln())
    }

    /// Continuum `J_ε` of the profile.
    pub fn penalized(&self, p: &PenaltyParams) -> f64 {
        self.energy() + f_eps(self.volume(), p)
    }

    /// Nodal samples around `center`.
    pub fn field(&self, grid: Grid, center: [f64; 2]) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.u((x - center[0]).hypot(y - center[1])))
    }
}

/// Linear profile `u = c (1 - x/d)₊` along the normal of a flat face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabSolution {
    pub c: f64,
    pub d: f64,
}

pub fn slab_solution(c: f64, d: f64) -> Result<SlabSolution> {
    if !(c > 0.0 && d > 0.0) {
        return Err(Error::InvalidParameter("slab solution needs c, d > 0".into()));
    }
    Ok(SlabSolution { c, d })
}

impl SlabSolution {
    pub fn u(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.c
        } else {
            (self.c * (1.0 - x / self.d)).max(0.0)
        }
    }

    pub fn lambda(&self) -> f64 {
        self.c / self.d
    }

    pub fn energy_per_length(&self) -> f64 {
        self.c * self.c / self.d
    }
}

pub const MAX_BRUTE_FORCE_CELLS: usize = 14;
const MAX_D_NODES: usize = 6;

/// A 1D lattice with `h = 1`:
/// `[outside] [n_left Ω] [D nodes] [n_right Ω] [outside]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineInstance {
    pub n_left: usize,
    pub n_right: usize,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub eps: f64,
    /// `μ` in cells.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub penalized: f64,
    pub energy: f64,
    /// Positive Ω cells of the minimizer.
    pub volume: usize,
    /// Positivity of the Ω cells, left side first.
    pub pattern: Vec<bool>,
    /// Minimizer on all line nodes, both outside end nodes included.
    pub u: Vec<f64>,
    /// Every other positivity pattern attaining the minimum within `1e-12`.
    pub ties: Vec<Vec<bool>>,
}

impl LineInstance {
    pub fn n_omega(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn n_nodes(&self) -> usize {
        self.n_omega() + self.phi.len() + 2
    }

    fn d_range(&self) -> std::ops::Range<usize> {
        1 + self.n_left..1 + self.n_left + self.phi.len()
    }

    /// Line index of each Ω cell, left side first.
    fn omega_index(&self) -> Vec<usize> {
        let nd = self.phi.len();
        (1..=self.n_left).chain(self.n_left + nd + 1..self.n_left + nd + 1 + self.n_right).collect()
    }

    pub fn sup_phi(&self) -> f64 {
        self.phi.iter().copied().fold(0.0, f64::max)
    }

    pub fn penalty(&self) -> PenaltyParams {
        let sup = self.sup_phi();
        PenaltyParams {
            eps: self.eps,
            mu: self.mu,
            tau: (sup / 8.0).max(f64::MIN_POSITIVE),
            pos_threshold: 1e-8 * sup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.is_empty() || self.phi.len() != self.psi.len() || self.phi.len() > MAX_D_NODES {
            return Err(Error::InvalidParameter(format!("line instance needs 1..={MAX_D_NODES} D nodes with matching obstacles")));
        }
        if self.n_omega() > MAX_BRUTE_FORCE_CELLS {
            return Err(Error::InvalidParameter(format!(
                "brute force is limited to {MAX_BRUTE_FORCE_CELLS} Ω cells, got {}",
                self.n_omega()
            )));
        }
        if self.phi.iter().zip(&self.psi).any(|(a, b)| !(a.is_finite() && b.is_finite() && *a >= 0.0 && a <= b)) {
            return Err(Error::InvalidObstacles("line obstacles need 0 ≤ φ ≤ ψ".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) || !(self.mu > 0.0) {
            return Err(Error::InvalidParameter("line instance needs eps in (0, 1) and mu > 0".into()));
        }
        Ok(())
    }

    /// The same instance as a lattice problem for the main solver. `D` is the interval
    /// spanning the D nodes and `R` puts the two end nodes on `∂B_R`.
    pub fn to_problem(&self) -> Result<(DomainSpec, DomainMasks, ObstaclePair, PenaltyParams)> {
        self.validate()?;
        let n = self.n_nodes();
        let r = (n - 1) as f64 / 2.0;
        let grid = Grid::new(n, 1, 1.0, [-r, 0.0])?;
        let nd = self.phi.len();
        let centre = -r + self.n_left as f64 + 1.0 + (nd as f64 - 1.0) / 2.0;
        let half = nd as f64 / 2.0;
        let spec = DomainSpec::with_dim(
            Shape::Disk { center: [centre, 0.0], radius: half },
            r,
            self.mu,
            1,
        )?;
        let d = self.d_range();
        let labels = (0..n)
            .map(|k| {
                if k == 0 || k == n - 1 {
                    NodeClass::Outside
                } else if d.contains(&k) {
                    NodeClass::Inner
                } else {
                    NodeClass::Exterior
                }
            })
            .collect();
        let masks = DomainMasks::from_labels(grid, labels)?;
        // values off D only need to satisfy the band hypotheses
        let mut phi = vec![1.0; n];
        let mut psi = vec![2.0; n];
        for (slot, k) in d.enumerate() {
            phi[k] = self.phi[slot];
            psi[k] = self.psi[slot];
        }
        let obstacles = ObstaclePair::from_fields(
            ScalarField::from_values(grid, phi)?,
            ScalarField::from_values(grid, psi)?,
            &masks,
        )?;
        Ok((spec, masks, obstacles, self.penalty()))
    }
}

/// Solves `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i` (Thomas algorithm).
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Discrete-harmonic fill-in on a line with `fixed[i] = Some(value)` pinned.
fn solve_line(fixed: &[Option<f64>]) -> Vec<f64> {
    let n = fixed.len();
    let (mut a, mut b, mut c, mut d) = (vec![0.0; n], vec![1.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        match fixed[i] {
            Some(v) => d[i] = v,
            None => {
                a[i] = -1.0;
                b[i] = 2.0;
                c[i] = -1.0;
            }
        }
    }
    thomas(&a, &b, &c, &d)
}

/// Exhaustive minimum of the discrete `J_ε` over all positivity patterns of the Ω
/// cells and all active sets of the D nodes.
pub fn brute_force_line(inst: &LineInstance) -> Result<BruteForceResult> {
    inst.validate()?;
    let p = inst.penalty();
    let n = inst.n_nodes();
    let omega = inst.omega_index();
    let d: Vec<usize> = inst.d_range().collect();
    let nd = d.len();
    let states = 3usize.pow(nd as u32);
    let tie_tol = 1e-12;

    let mut best: Option<(f64, f64, Vec<f64>, Vec<bool>)> = None;
    let mut per_pattern: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    let mut fixed = vec![None; n];
    for pattern in 0u32..(1 << omega.len()) {
        for active in 0..states {
            fixed.iter_mut().for_each(|f| *f = Some(0.0));
            for (bit, &k) in omega.iter().enumerate() {
                if pattern >> bit & 1 == 1 {
                    fixed[k] = None;
                }
            }
            let mut code = active;
            let mut skip = false;
            for (slot, &k) in d.iter().enumerate() {
                let (lo, hi) = (inst.phi[slot], inst.psi[slot]);
                fixed[k] = match code % 3 {
                    0 if lo < hi => None,
                    1 => Some(lo),
                    2 if lo < hi => Some(hi),
                    _ => {
                        skip = true;
                        None
                    }
                };
                code /= 3;
            }
            if skip {
                continue;
            }
            let u = solve_line(&fixed);
            let feasible = d.iter().enumerate().all(|(slot, &k)| {
                let slack = 1e-12 * (1.0 + inst.psi[slot].abs());
                u[k] >= inst.phi[slot] - slack && u[k] <= inst.psi[slot] + slack
            });
            if !feasible {
                continue;
            }
            let energy: f64 = u.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
            let positive: Vec<bool> = omega.iter().map(|&k| u[k] > p.pos_threshold).collect();
            let count = positive.iter().filter(|b| **b).count();
            let j = energy + f_eps(count as f64, &p);
            let slot = per_pattern.entry(positive.clone()).or_insert(f64::INFINITY);
            *slot = slot.min(j);
            if best.as_ref().is_none_or(|b| j < b.0) {
                best = Some((j, energy, u, positive));
            }
        }
    }
    let (penalized, energy, u, pattern) = best.expect("the all-zero pattern with φ on D is always feasible");
    let volume = pattern.iter().filter(|b| **b).count();
    let ties = per_pattern
        .into_iter()
        .filter(|(pat, j)| *pat != pattern && *j <= penalized + tie_tol)
        .map(|(pat, _)| pat)
        .collect();
    Ok(BruteForceResult { penalized, energy, volume, pattern, u, ties })
}

/// One D node with `φ = ψ = phi_value` at the left end of `n_omega` Ω cells.
pub fn brute_force_1d(n_omega: usize, phi_value: f64, mu_cells: f64, eps: f64) -> Result<BruteForceResult> {
    brute_force_line(&LineInstance {
        n_left: 0,
        n_right: n_omega,
        phi: vec![phi_value],
        psi: vec![phi_value],
        eps,
        mu: mu_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_reproduces_linear_profile() {
        let u = solve_line(&[Some(1.0), None, None, Some(0.0)]);
        assert!((u[1] - 2.0 / 3.0).abs() < 1e-15 && (u[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_obstacle_gives_zero_field() {
        let r = brute_force_1d(6, 0.0, 3.0, 0.1).unwrap();
        assert!(r.u.iter().all(|v| *v == 0.0));
        assert!((r.penalized + 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_large_instances() {
        assert!(brute_force_1d(15, 1.0, 3.0, 0.1).is_err());
    }

    #[test]
    fn radial_laplace_equation() {
        let s = radial_solution(1.0, 1.0, 3.0 * PI).unwrap();
        assert!((s.b - 2.0).abs() < 1e-15);
        // r u'(r) is constant
        for r in [1.1, 1.4, 1.9] {
            assert!((r * s.slope(r) - 1.0 / 2f64.ln()).abs() < 1e-14);
        }
    }
}
