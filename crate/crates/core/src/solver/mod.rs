//! Minimization of the discrete penalized functional over the admissible set `K_R`,
//! plus the elliptic sub-solvers it is built from.
//!
//! A solve runs in two phases:
//!
//! 1. **Continuation.** For each ramp width `τ` of a decreasing schedule the smoothed
//!    functional `E(u) + f_ε(Σ H_τ(u) h^d)` is driven down by projected descent. The
//!    default step rule is a projected SOR sweep in which every nodal update minimizes
//!    the smoothed functional exactly along that coordinate (then over-relaxes when that
//!    still lowers it), so every accepted sweep is monotone.
//! 2. **Support refinement.** With the sharp measure restored, the positive set is
//!    adjusted node by node. For a fixed support the remaining problem is a strictly
//!    convex double-obstacle problem solved to round-off by PSOR, so each candidate
//!    support is scored with the exact discrete `J_ε`; a change is kept only if it
//!    lowers it.

mod elliptic;
mod kernel;
mod price;
mod refine;

pub use elliptic::{
    collar_mask, extend_obstacles, harmonic_extension, solve_double_obstacle, EllipticSolution,
    ExtendedObstacles,
};
pub use kernel::{psor, sor_omega};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainMasks, DomainSpec};
use crate::energy::{dirichlet_energy, f_eps, positivity_volume, ramp, PenalizedEnergy, PenaltyParams};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::obstacles::ObstaclePair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// Projected SOR with exact coordinate minimization; `omega` defaults to the
    /// optimal Laplace value for the grid.
    Sor {
        #[serde(default)]
        omega: Option<f64>,
    },
    /// Projected gradient step of fixed length.
    Fixed { step: f64 },
    /// Projected gradient with Armijo backtracking, starting from `initial`
    /// (default `h²/4`).
    Backtracking {
        #[serde(default)]
        initial: Option<f64>,
        #[serde(default = "default_armijo")]
        armijo: f64,
        #[serde(default = "default_shrink")]
        shrink: f64,
    },
}

fn default_armijo() -> f64 {
    1e-4
}

fn default_shrink() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    /// Budget of continuation sweeps (or gradient steps) over all stages.
    pub max_iters: usize,
    pub step_rule: StepRule,
    /// A stage ends once a sweep lowers its objective by less than this, relatively.
    pub tolerance: f64,
    /// Ramp widths; `None` means `sup φ · 2^-k` for `k = 3..=12`.
    pub tau_schedule: Option<Vec<f64>>,
    pub seed: u64,
    /// Amplitude (relative to `sup φ`) of seeded noise added to the initial field.
    pub init_noise: f64,
    /// Start each SOR stage from the fixed-price predictor.
    pub price_search: bool,
    /// Run the exact-measure support refinement after continuation.
    pub refine: bool,
    pub max_refine_rounds: usize,
    /// Exact trial moves scored per refinement round once estimates run dry.
    pub refine_trials: usize,
    /// PSOR stopping threshold, relative to `sup φ`, for fixed-support solves.
    pub inner_tolerance: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            step_rule: StepRule::Sor { omega: None },
            tolerance: 1e-9,
            tau_schedule: None,
            seed: 0,
            init_noise: 0.0,
            price_search: true,
            refine: true,
            max_refine_rounds: 400,
            refine_trials: 6,
            inner_tolerance: 1e-11,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.inner_tolerance > 0.0) {
            return Err(Error::InvalidParameter("inner_tolerance must be positive".into()));
        }
        if let Some(s) = &self.tau_schedule {
            if s.is_empty() || s.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::InvalidParameter("tau schedule must be non-empty and positive".into()));
            }
            if s.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::InvalidParameter("tau schedule must be strictly decreasing".into()));
            }
        }
        match self.step_rule {
            StepRule::Sor { omega: Some(w) } if !(w > 0.0 && w < 2.0) => {
                return Err(Error::InvalidParameter("SOR omega must lie in (0, 2)".into()))
            }
            StepRule::Fixed { step } if !(step > 0.0) => {
                return Err(Error::InvalidParameter("fixed step must be positive".into()))
            }
            StepRule::Backtracking { initial, armijo, shrink } => {
                if initial.is_some_and(|t| !(t > 0.0)) || !(armijo > 0.0 && armijo < 1.0) || !(shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::InvalidParameter("backtracking needs initial > 0, armijo and shrink in (0, 1)".into()));
                }
            }
            _ => {}
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::InvalidParameter("init_noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, sup_phi: f64) -> Vec<f64> {
        self.tau_schedule
            .clone()
            .unwrap_or_else(|| (3..=12).map(|k| sup_phi * 0.5f64.powi(k)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Continuation,
    Refine,
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub phase: Phase,
    /// Continuation stage index (`τ` schedule position); refinement rows reuse the last index + 1.
    pub stage: usize,
    pub iteration: usize,
    /// Ramp width of the stage (0 for the sharp measure).
    pub tau: f64,
    /// The functional this stage minimizes: smoothed during continuation, exact afterwards.
    pub objective: f64,
    /// Exact `J_ε(u)`.
    pub penalized: f64,
    pub energy: f64,
    pub volume: f64,
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: ScalarField,
    pub energy: f64,
    pub penalized_energy: f64,
    pub exterior_volume: f64,
    /// Exact `J_ε` of the initial field (the comparison value `M` of the volume bound).
    pub initial_penalized_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
    pub penalty: PenaltyParams,
    pub sup_phi: f64,
}

impl SolveResult {
    /// Largest increase of a stage objective between consecutive accepted iterates.
    pub fn max_objective_increase(&self) -> f64 {
        self.history
            .windows(2)
            .filter(|w| w[0].phase == w[1].phase && w[0].stage == w[1].stage && w[1].phase != Phase::Init)
            .map(|w| w[1].objective - w[0].objective)
            .fold(0.0, f64::max)
    }

    /// Largest increase of the exact `J_ε` across refinement iterates.
    pub fn max_penalized_increase(&self) -> f64 {
        self.history
            .windows(2)
            .filter(|w| w[0].phase == Phase::Refine && w[1].phase == Phase::Refine)
            .map(|w| w[1].penalized - w[0].penalized)
            .fold(0.0, f64::max)
    }
}

/// Clamps into `[φ, ψ]` on `D`, `[0, sup_D φ]` on `Ω_R`, and zero on/outside `∂B_R`.
pub fn project_admissible(u: &ScalarField, masks: &DomainMasks, obstacles: &ObstaclePair) -> ScalarField {
    let sup = obstacles.sup_phi();
    let mut out = u.clone();
    for (k, v) in out.values_mut().iter_mut().enumerate() {
        *v = if masks.is_d(k) {
            v.clamp(obstacles.phi.values()[k], obstacles.psi.values()[k])
        } else if masks.is_omega(k) {
            v.clamp(0.0, sup)
        } else {
            0.0
        };
    }
    out
}

/// Node bounds and bookkeeping shared by both phases.
pub(crate) struct Problem<'a> {
    pub grid: Grid,
    pub masks: &'a DomainMasks,
    pub p: PenaltyParams,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Non-pinned nodes of `D`.
    pub free_d: Vec<usize>,
    pub omega: Vec<usize>,
    pub sup_phi: f64,
    /// `h^(d-2)`.
    pub w: f64,
    /// `h^d`.
    pub cv: f64,
    /// No free node sits on the lattice edge, so every stencil is complete.
    interior: bool,
}

impl<'a> Problem<'a> {
    fn new(masks: &'a DomainMasks, obstacles: &ObstaclePair, p: PenaltyParams) -> Self {
        let grid = *masks.grid();
        let sup_phi = obstacles.sup_phi();
        let mut lo = vec![0.0; grid.len()];
        let mut hi = vec![0.0; grid.len()];
        let mut free_d = Vec::new();
        let mut omega = Vec::new();
        for k in 0..grid.len() {
            if masks.is_d(k) {
                // truncation at sup φ never raises the energy, so iterates keep 0 ≤ u ≤ sup φ
                lo[k] = obstacles.phi.values()[k];
                hi[k] = obstacles.psi.values()[k].min(sup_phi).max(lo[k]);
                if hi[k] > lo[k] {
                    free_d.push(k);
                }
            } else if masks.is_omega(k) {
                hi[k] = sup_phi;
                omega.push(k);
            }
        }
        let interior = free_d.iter().chain(&omega).all(|&k| grid.neighbors(k).len() == 2 * grid.dim());
        Self { grid, masks, p, lo, hi, free_d, omega, sup_phi, w: grid.edge_weight(), cv: grid.cell_volume(), interior }
    }

    #[inline]
    fn neighbor_sum(&self, u: &[f64], k: usize) -> (f64, f64) {
        if self.interior {
            let nx = self.grid.nx;
            return if self.grid.ny == 1 {
                (u[k - 1] + u[k + 1], 2.0)
            } else {
                (u[k - 1] + u[k + 1] + u[k - nx] + u[k + nx], 4.0)
            };
        }
        let mut r = 0.0;
        let mut n = 0.0;
        self.grid.for_each_neighbor(k, |m| {
            r += u[m];
            n += 1.0;
        });
        (r, n)
    }

    fn energy(&self, u: &[f64]) -> f64 {
        dirichlet_energy(&ScalarField::from_values(self.grid, u.to_vec()).expect("finite iterate"))
    }

    fn smoothed_volume(&self, u: &[f64], tau: f64) -> f64 {
        self.omega.iter().map(|&k| ramp(u[k], tau)).sum::<f64>() * self.cv
    }

    fn exact_volume(&self, u: &[f64]) -> f64 {
        self.omega.iter().filter(|&&k| u[k] > self.p.pos_threshold).count() as f64 * self.cv
    }

    fn exact_j(&self, u: &[f64]) -> (f64, f64, f64) {
        let e = self.energy(u);
        let v = self.exact_volume(u);
        (e + f_eps(v, &self.p), e, v)
    }

    fn entry(&self, u: &[f64], phase: Phase, stage: usize, iteration: usize, tau: f64, objective: f64) -> HistoryEntry {
        let (penalized, energy, volume) = self.exact_j(u);
        let (mut u_min, mut u_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in u {
            u_min = u_min.min(v);
            u_max = u_max.max(v);
        }
        HistoryEntry { phase, stage, iteration, tau, objective, penalized, energy, volume, u_min, u_max }
    }

    /// Coordinate function `w (n x² - 2 r x) + f_ε(v_rest + h^d H_τ(x))` of an `Ω` node.
    #[inline]
    fn coord_value(&self, x: f64, r: f64, n: f64, v_rest: f64, tau: f64) -> f64 {
        self.w * (n * x * x - 2.0 * r * x) + f_eps(v_rest + self.cv * ramp(x, tau), &self.p)
    }

    /// Exact minimizer of the coordinate function over `[0, hi]`.
    fn coord_min(&self, r: f64, n: f64, hi: f64, v_rest: f64, tau: f64) -> f64 {
        let p = &self.p;
        let mut best = 0.0;
        let mut best_val = self.coord_value(0.0, r, n, v_rest, tau);
        let mut consider = |x: f64| {
            let val = self.coord_value(x, r, n, v_rest, tau);
            if val < best_val {
                best_val = val;
                best = x;
            }
        };
        let top = tau.min(hi);
        // kink of f_ε along the ramp
        let xb = ((p.mu - v_rest) * tau / self.cv).clamp(0.0, top);
        for (a, b, slope) in [(0.0, xb, p.eps), (xb, top, 1.0 / p.eps)] {
            if b > a {
                let x = (2.0 * self.w * r - slope * self.cv / tau) / (2.0 * self.w * n);
                consider(x.clamp(a, b));
                consider(b);
            }
        }
        if hi > tau {
            consider((r / n).clamp(tau, hi));
        }
        best
    }

    /// One projected SOR sweep on the smoothed functional; `vol` tracks `Σ H_τ h^d`.
    fn sor_sweep(&self, u: &mut [f64], order: impl Iterator<Item = usize>, vol: &mut f64, tau: f64, omega: f64) {
        for k in order {
            let (r, n) = self.neighbor_sum(u, k);
            let x0 = u[k];
            if self.masks.is_d(k) {
                let target = (r / n).clamp(self.lo[k], self.hi[k]);
                u[k] = (x0 + omega * (target - x0)).clamp(self.lo[k], self.hi[k]);
                continue;
            }
            if x0 == 0.0 && r == 0.0 {
                continue;
            }
            let v_rest = *vol - self.cv * ramp(x0, tau);
            let star = self.coord_min(r, n, self.hi[k], v_rest, tau);
            let over = (x0 + omega * (star - x0)).clamp(0.0, self.hi[k]);
            let g0 = self.coord_value(x0, r, n, v_rest, tau);
            let x = if self.coord_value(over, r, n, v_rest, tau) <= g0 { over } else { star };
            u[k] = x;
            *vol = v_rest + self.cv * ramp(x, tau);
        }
    }

    fn project(&self, u: &mut [f64]) {
        for k in 0..u.len() {
            u[k] = u[k].clamp(self.lo[k], self.hi[k]);
        }
    }

    /// `h^d`-weighted negative gradient of the smoothed functional, zero on pinned nodes.
    fn direction(&self, u: &[f64], tau: f64) -> Vec<f64> {
        let slope = crate::energy::f_eps_slope(self.smoothed_volume(u, tau), &self.p);
        let mut d = vec![0.0; u.len()];
        let h2 = self.grid.h * self.grid.h;
        for &k in self.free_d.iter().chain(self.omega.iter()) {
            let (r, n) = self.neighbor_sum(u, k);
            let lap = (r - n * u[k]) / h2;
            d[k] = if self.masks.is_d(k) {
                2.0 * lap
            } else {
                2.0 * lap - slope * crate::energy::ramp_slope(u[k], tau)
            };
        }
        d
    }

    fn smoothed_j(&self, u: &[f64], tau: f64) -> f64 {
        self.energy(u) + f_eps(self.smoothed_volume(u, tau), &self.p)
    }
}

/// Minimizes the discrete `J_ε` over `K_R`, starting from the harmonic comparison
/// function (`φ` on `∂D`, zero on `∂B_R`).
pub fn solve_penalized(
    spec: &DomainSpec,
    masks: &DomainMasks,
    obstacles: &ObstaclePair,
    p: &PenaltyParams,
    sp: &SolveParams,
) -> Result<SolveResult> {
    solve_penalized_from(spec, masks, obstacles, p, sp, None)
}

/// As [`solve_penalized`], optionally warm-started from `init` (projected first).
pub fn solve_penalized_from(
    spec: &DomainSpec,
    masks: &DomainMasks,
    obstacles: &ObstaclePair,
    p: &PenaltyParams,
    sp: &SolveParams,
    init: Option<&ScalarField>,
) -> Result<SolveResult> {
    p.validate()?;
    sp.validate()?;
    spec.validate()?;
    let grid = *masks.grid();
    if !obstacles.phi.grid().same_lattice(&grid) {
        return Err(Error::InvalidParameter("obstacles and masks live on different grids".into()));
    }
    if masks.omega_measure <= p.mu {
        return Err(Error::InsufficientExteriorVolume { available: masks.omega_measure, mu: p.mu });
    }
    let prob = Problem::new(masks, obstacles, *p);
    let mut u = match init {
        Some(f) => {
            if !f.grid().same_lattice(&grid) {
                return Err(Error::InvalidParameter("initial field lives on a different grid".into()));
            }
            f.values().to_vec()
        }
        None => initial_field(masks, obstacles)?.into_values(),
    };
    if sp.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(sp.seed);
        for &k in &prob.omega {
            u[k] += sp.init_noise * prob.sup_phi * rng.gen_range(-1.0..1.0);
        }
    }
    prob.project(&mut u);

    let (initial_penalized_energy, _, _) = prob.exact_j(&u);
    let mut history = vec![prob.entry(&u, Phase::Init, 0, 0, 0.0, initial_penalized_energy)];
    let schedule = sp.schedule(prob.sup_phi);
    let mut iterations = 0usize;
    let mut converged = true;

    let mut order: Vec<usize> = prob.free_d.iter().chain(prob.omega.iter()).copied().collect();
    order.sort_unstable();
    let omega = match sp.step_rule {
        StepRule::Sor { omega: Some(w) } => w,
        _ => sor_omega(grid.h, 2.0 * spec.outer_radius),
    };

    let mut price_hint = None;
    for (stage, &tau) in schedule.iter().enumerate() {
        let mut j_prev = prob.smoothed_j(&u, tau);
        history.push(prob.entry(&u, Phase::Continuation, stage, 0, tau, j_prev));
        let mut stage_iter = 0;
        if matches!(sp.step_rule, StepRule::Sor { .. }) && sp.price_search {
            let pred = prob.price_search(&u, &order, tau, omega, price_hint, 1e-6 * prob.sup_phi);
            iterations += pred.sweeps;
            price_hint = Some(pred.price);
            if pred.objective < j_prev {
                u = pred.u;
                j_prev = pred.objective;
                stage_iter = 1;
                history.push(prob.entry(&u, Phase::Continuation, stage, stage_iter, tau, j_prev));
            }
        }
        let mut backup = u.clone();
        let mut step_hint: Option<f64> = None;
        loop {
            if iterations >= sp.max_iters {
                converged = false;
                break;
            }
            backup.copy_from_slice(&u);
            let accepted = match &sp.step_rule {
                StepRule::Sor { .. } => {
                    let mut vol = prob.smoothed_volume(&u, tau);
                    if stage_iter % 2 == 0 {
                        prob.sor_sweep(&mut u, order.iter().copied(), &mut vol, tau, omega);
                    } else {
                        prob.sor_sweep(&mut u, order.iter().rev().copied(), &mut vol, tau, omega);
                    }
                    true
                }
                StepRule::Fixed { step } => {
                    let d = prob.direction(&u, tau);
                    for k in 0..u.len() {
                        u[k] += step * d[k];
                    }
                    prob.project(&mut u);
                    true
                }
                StepRule::Backtracking { initial, armijo, shrink } => {
                    let t0 = initial.unwrap_or(0.25 * grid.h * grid.h);
                    let d = prob.direction(&u, tau);
                    let mut t = step_hint.unwrap_or(t0);
                    let mut ok = false;
                    while t >= 1e-12 * t0 {
                        for k in 0..u.len() {
                            u[k] = backup[k] + t * d[k];
                        }
                        prob.project(&mut u);
                        let decrease: f64 =
                            (0..u.len()).map(|k| d[k] * (u[k] - backup[k])).sum::<f64>() * prob.cv;
                        if prob.smoothed_j(&u, tau) <= j_prev - armijo * decrease {
                            ok = true;
                            break;
                        }
                        t *= shrink;
                    }
                    step_hint = Some((t / shrink).min(t0));
                    ok
                }
            };
            iterations += 1;
            stage_iter += 1;
            let j = prob.smoothed_j(&u, tau);
            if !accepted || j > j_prev {
                u.copy_from_slice(&backup);
                break;
            }
            history.push(prob.entry(&u, Phase::Continuation, stage, stage_iter, tau, j));
            let rel = (j_prev - j) / j.abs().max(f64::MIN_POSITIVE);
            j_prev = j;
            if rel < sp.tolerance && stage_iter > 1 {
                break;
            }
        }
        if !converged {
            break;
        }
    }

    if sp.refine {
        let stage = schedule.len();
        let out = refine::refine_support(&prob, &mut u, sp, stage, &mut history);
        iterations += out.trials;
        converged &= out.converged;
    }

    let field = ScalarField::from_values(grid, u)?;
    let energy = dirichlet_energy(&field);
    let exterior_volume = positivity_volume(&field, masks, p);
    Ok(SolveResult {
        penalized_energy: energy + f_eps(exterior_volume, p),
        energy,
        exterior_volume,
        initial_penalized_energy,
        iterations,
        converged,
        history,
        penalty: *p,
        sup_phi: prob.sup_phi,
        u: field,
    })
}

/// Harmonic comparison function: `φ` on `D`, zero on and beyond `∂B_R`, harmonic in `Ω_R`.
pub fn initial_field(masks: &DomainMasks, obstacles: &ObstaclePair) -> Result<ScalarField> {
    let grid = *masks.grid();
    let mut data = ScalarField::zeros(grid);
    for k in masks.d_nodes() {
        data.values_mut()[k] = obstacles.phi.values()[k];
    }
    let region: Vec<bool> = (0..grid.len()).map(|k| masks.is_omega(k)).collect();
    let ext = elliptic::harmonic_extension_to(&region, &data, 1e-6)?;
    Ok(project_admissible(&ext.u, masks, obstacles))
}

/// Summary of the exact penalized energy of a field.
pub fn evaluate(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> PenalizedEnergy {
    crate::energy::penalized_energy(u, masks, p)
}
