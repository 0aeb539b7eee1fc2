//! Pass/fail property checks over solver output.

use std::fmt;

use serde::Serialize;

use crate::domain::{build_grid, rasterize, DomainMasks, DomainSpec, Face, Shape};
use crate::energy::PenaltyParams;
use crate::error::{Error, Result};
use crate::freeboundary::{clearance_check, estimate_lambda, extract_free_boundary, support_radius};
use crate::grid::ScalarField;
use crate::obstacles::{make_obstacles, ObstacleKind, ObstaclePair};
use crate::solver::{solve_penalized, solve_penalized_from, SolveParams, SolveResult};

/// One property check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// The statement being probed.
    pub anchor: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Informational checks are reported but do not affect the overall verdict.
    pub asserted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn new(name: &str, anchor: &str, measured: f64, threshold: f64, pass: bool) -> Self {
        Check {
            name: name.into(),
            anchor: anchor.into(),
            measured,
            threshold,
            pass,
            asserted: true,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    /// Marks the check as reported only.
    pub fn informational(mut self) -> Self {
        self.asserted = false;
        self
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PropertyReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl PropertyReport {
    pub fn new() -> Self {
        PropertyReport { checks: Vec::new(), pass: true }
    }

    pub fn push(&mut self, c: Check) {
        if c.asserted && !c.pass {
            self.pass = false;
        }
        self.checks.push(c);
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>14} {:>14}  result", "check", "measured", "threshold")?;
        for c in &self.checks {
            let verdict = match (c.pass, c.asserted) {
                (true, true) => "pass",
                (false, true) => "FAIL",
                (true, false) => "pass (info)",
                (false, false) => "fail (info)",
            };
            writeln!(f, "{:<24} {:>14.6e} {:>14.6e}  {}", c.name, c.measured, c.threshold, verdict)?;
            if let Some(d) = &c.detail {
                writeln!(f, "    {d}")?;
            }
        }
        write!(f, "overall: {}", if self.pass { "pass" } else { "FAIL" })
    }
}

const BOUND_REL_TOL: f64 = 1e-8;

/// `-tol ≤ u ≤ sup φ (1 + tol)` at every node of the final field and at every
/// recorded iterate.
pub fn check_max_principle(result: &SolveResult) -> Check {
    let sup = result.sup_phi;
    let g = result.u.grid();
    let (lo, hi) = (-BOUND_REL_TOL * sup, sup * (1.0 + BOUND_REL_TOL));
    // excess over the band, positive when violated
    let mut worst = (f64::NEG_INFINITY, None);
    for (k, &v) in result.u.values().iter().enumerate() {
        let excess = (lo - v).max(v - hi);
        if excess > worst.0 {
            worst = (excess, Some(g.ij(k)));
        }
    }
    let history = result.history.iter().map(|h| (lo - h.u_min).max(h.u_max - hi)).fold(f64::NEG_INFINITY, f64::max);
    let measured = worst.0.max(history);
    let mut c = Check::new("max_principle", "0 <= u <= sup_D phi", measured, 0.0, measured <= 0.0);
    if worst.0 > 0.0 {
        let (i, j) = worst.1.unwrap();
        c = c.with_detail(format!("node ({i}, {j}) leaves [0, sup phi] by {:e}", worst.0));
    } else if history > 0.0 {
        c = c.with_detail(format!("an iterate leaves [0, sup phi] by {history:e}"));
    }
    c
}

pub const HARMONICITY_REL_TOL: f64 = 1e-4;

/// Interior positive-phase residual `max |h² Δ_h u|` and subharmonicity on `Ω_R`.
pub fn check_harmonicity(result: &SolveResult, masks: &DomainMasks) -> Check {
    let u = &result.u;
    let g = *u.grid();
    let thr = result.penalty.pos_threshold;
    let tol = HARMONICITY_REL_TOL * result.sup_phi;
    let pos: Vec<bool> = u.values().iter().map(|v| *v > thr).collect();
    // graph distance to a non-positive node, capped at 3
    let mut depth: Vec<u8> = pos.iter().map(|&p| if p { 3 } else { 0 }).collect();
    for level in 0..2u8 {
        let prev = depth.clone();
        for k in 0..g.len() {
            if prev[k] > level {
                let mut near = false;
                g.for_each_neighbor(k, |m| near |= prev[m] == level);
                if near || g.neighbors(k).len() < 2 * g.dim() {
                    depth[k] = level + 1;
                }
            }
        }
    }
    let h2 = g.h * g.h;
    let mut harm: f64 = 0.0;
    let mut sub: f64 = 0.0;
    let mut count = 0;
    for k in masks.omega_nodes() {
        let mut interior = g.neighbors(k).len() == 2 * g.dim();
        g.for_each_neighbor(k, |m| interior &= !masks.is_outside(m));
        if !interior {
            continue;
        }
        let r = h2 * u.laplacian_at(k);
        sub = sub.max(-r);
        if depth[k] >= 3 && u.values()[k] < result.sup_phi {
            harm = harm.max(r.abs());
            count += 1;
        }
    }
    let measured = harm.max(sub);
    Check::new(
        "harmonicity",
        "harmonic in {u > 0} and subharmonic in Omega",
        measured,
        tol,
        measured <= tol,
    )
    .with_detail(format!("{count} interior positive nodes, max |h^2 lap u| = {harm:e}, max subharmonic defect = {sub:e}"))
}

/// `|{u > 0} ∩ Ω_R| ≤ μ + M ε` with `M` the comparison energy (the initial field's `J_ε`
/// unless `m_probe` is given).
pub fn check_volume_bound(result: &SolveResult, m_probe: Option<f64>) -> Check {
    let p = &result.penalty;
    let m = m_probe.unwrap_or(result.initial_penalized_energy).max(0.0);
    let bound = p.mu + m * p.eps;
    Check::new("volume_bound", "|{u > 0} in Omega| <= mu + M eps", result.exterior_volume, bound, result.exterior_volume <= bound)
        .with_detail(format!("M = {m:.6}"))
}

/// Stage objectives and refinement energies never increase between accepted iterates.
pub fn check_descent(result: &SolveResult) -> Check {
    let measured = result.max_objective_increase().max(result.max_penalized_increase());
    Check::new("descent", "accepted steps never increase the functional", measured, 0.0, measured <= 0.0)
        .with_detail(format!("{} history rows", result.history.len()))
}

/// Positivity on the collar of width `delta` around `D` (reported, not asserted).
pub fn check_clearance(result: &SolveResult, spec: &DomainSpec, masks: &DomainMasks, delta: f64) -> Check {
    let c = clearance_check(&result.u, spec, masks, &result.penalty, delta);
    let measured = if c.min_value.is_finite() { c.min_value } else { 0.0 };
    Check::new("clearance", "u > 0 on a collar of D", measured, result.penalty.pos_threshold, c.pass)
        .with_detail(format!("delta = {delta:.4}, {} collar nodes", c.collar_nodes))
        .informational()
}

pub const LAMBDA_CV_MAX: f64 = 0.10;

/// Coefficient of variation of the free-boundary gradient jump.
pub fn check_lambda_constancy(result: &SolveResult, masks: &DomainMasks) -> Check {
    let anchor = "the gradient jump is constant along the free boundary";
    let est = extract_free_boundary(&result.u, masks, &result.penalty)
        .and_then(|fb| estimate_lambda(&result.u, masks, &result.penalty, &fb));
    match est {
        Ok(l) => Check::new("lambda_constancy", anchor, l.cv, LAMBDA_CV_MAX, l.cv <= LAMBDA_CV_MAX)
            .with_detail(format!("mean {:.6}, {} samples, {} skipped", l.mean, l.samples.len(), l.skipped)),
        Err(e) => Check::new("lambda_constancy", anchor, f64::NAN, LAMBDA_CV_MAX, false).with_detail(e.to_string()),
    }
}

/// Euler-Lagrange residual on interior `D` nodes.
///
/// Nodes are classified by the coincidence sets `{u = φ}`, `{u = ψ}` (both when `φ = ψ`)
/// and compared with `Δφ`, `Δψ` or zero. The `L¹` mean over interior `D` nodes is the
/// measured value: the Laplacian of a `C^{1,1}` solution jumps across the edge of a
/// coincidence set, so the `O(1)` error there only covers an `O(h)` fraction of `D`.
pub fn check_euler_lagrange(
    result: &SolveResult,
    obstacles: &ObstaclePair,
    masks: &DomainMasks,
    solver_tolerance: f64,
) -> Result<EulerLagrange> {
    let g = *masks.grid();
    let u = &result.u;
    let c2 = obstacles
        .c2_norm(masks)
        .ok_or_else(|| Error::InvalidObstacles("Euler-Lagrange check needs twice differentiable analytic obstacles".into()))?;
    let dim = g.dim();
    let touch = 1e-9 * result.sup_phi.max(1.0);
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
    let mut classes = [0usize; 4];
    for k in masks.d_nodes() {
        let mut inner = true;
        g.for_each_neighbor(k, |m| inner &= masks.is_d(m));
        if !inner || g.neighbors(k).len() < 2 * dim {
            continue;
        }
        let q = g.point(k);
        let (lo, hi) = (obstacles.lower_jet(q).unwrap(), obstacles.upper_jet(q).unwrap());
        let on_lo = u.values()[k] <= obstacles.phi.values()[k] + touch;
        let on_hi = u.values()[k] >= obstacles.psi.values()[k] - touch;
        let lap = |j: crate::obstacles::Jet| j.laplacian(dim).unwrap_or(0.0);
        let (class, rhs) = match (on_lo, on_hi) {
            (true, true) => (3, lap(hi)),
            (true, false) => (1, lap(lo)),
            (false, true) => (2, lap(hi)),
            (false, false) => (0, 0.0),
        };
        classes[class] += 1;
        let r = (u.laplacian_at(k) - rhs).abs();
        sum += r;
        max = max.max(r);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidParameter("D has no interior nodes".into()));
    }
    let mean = sum / n as f64;
    let threshold = 10.0 * g.h * c2 + solver_tolerance;
    let check = Check::new("euler_lagrange", "lap u = lap phi on {u=phi}, lap psi on {u=psi}, 0 elsewhere in D", mean, threshold, mean <= threshold)
        .with_detail(format!(
            "{n} nodes (free {}, lower {}, upper {}, both {}), max residual {max:.4e}",
            classes[0], classes[1], classes[2], classes[3]
        ));
    Ok(EulerLagrange { check, mean_residual: mean, max_residual: max, classes })
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerLagrange {
    pub check: Check,
    pub mean_residual: f64,
    pub max_residual: f64,
    /// Node counts: free, lower contact, upper contact, both.
    pub classes: [usize; 4],
}

/// Residual allowance for a converged solve: the nodal stopping tolerance seen through `Δ_h`.
pub fn solver_residual_allowance(result: &SolveResult, sp: &SolveParams) -> f64 {
    let h = result.u.grid().h;
    10.0 * sp.inner_tolerance * result.sup_phi / (h * h)
}

/// Checks that apply to every converged solve.
pub fn standard_battery(result: &SolveResult, spec: &DomainSpec, masks: &DomainMasks) -> PropertyReport {
    battery(result, spec, masks, None, 2.0 * masks.grid().h)
}

/// [`standard_battery`] with an explicit volume-bound comparison value and clearance width.
pub fn battery(
    result: &SolveResult,
    spec: &DomainSpec,
    masks: &DomainMasks,
    m_probe: Option<f64>,
    clearance_delta: f64,
) -> PropertyReport {
    let mut r = PropertyReport::new();
    r.push(
        Check::new("converged", "the solver reached its stopping criterion", result.iterations as f64, f64::NAN, result.converged)
            .with_detail(format!("{} iterations", result.iterations)),
    );
    r.push(check_max_principle(result));
    r.push(check_harmonicity(result, masks));
    r.push(check_volume_bound(result, m_probe));
    r.push(check_descent(result));
    r.push(check_clearance(result, spec, masks, clearance_delta));
    r
}

pub const LAMBDA_SWEEP_RATIO_MAX: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub exterior_volume: f64,
    pub energy: f64,
    pub penalized_energy: f64,
    pub lambda_mean: Option<f64>,
    pub support_radius: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub mu: f64,
    pub rel_tol: f64,
    pub rows: Vec<SweepRow>,
    /// Largest listed `ε` such that it and every smaller listed `ε` recover `μ`.
    pub eps0: Option<f64>,
    /// Why the sweep stopped early, if it did.
    pub aborted: Option<String>,
    #[serde(skip)]
    pub results: Vec<SolveResult>,
}

impl SweepResult {
    fn detect_eps0(&mut self) {
        self.eps0 = None;
        for row in self.rows.iter().rev() {
            if (row.exterior_volume - self.mu).abs() <= self.rel_tol * self.mu {
                self.eps0 = Some(row.eps);
            } else {
                break;
            }
        }
    }

    /// `max λ / min λ` over the rows with a free boundary.
    pub fn lambda_ratio(&self) -> Option<f64> {
        let l: Vec<f64> = self.rows.iter().filter_map(|r| r.lambda_mean).collect();
        if l.is_empty() {
            return None;
        }
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = l.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max / min)
    }

    /// `λ` stays within a bounded band across the sweep.
    pub fn lambda_check(&self) -> Check {
        let anchor = "lambda_eps is bounded above and below uniformly in eps";
        match self.lambda_ratio() {
            Some(r) => Check::new("lambda_bounded", anchor, r, LAMBDA_SWEEP_RATIO_MAX, r <= LAMBDA_SWEEP_RATIO_MAX)
                .with_detail(format!("max/min lambda over {} rows", self.rows.iter().filter(|r| r.lambda_mean.is_some()).count())),
            None => Check::new("lambda_bounded", anchor, f64::NAN, LAMBDA_SWEEP_RATIO_MAX, false).with_detail("no free boundary in any row"),
        }
    }

    /// Volume recovery for every listed `ε ≤ ε₀`.
    pub fn check(&self) -> Check {
        let anchor = "the volume constraint is recovered exactly for small eps";
        let Some(e0) = self.eps0 else {
            return Check::new("volume_recovery", anchor, f64::NAN, self.rel_tol, false).with_detail("no eps0 detected");
        };
        let worst = self
            .rows
            .iter()
            .filter(|r| r.eps <= e0)
            .map(|r| (r.exterior_volume - self.mu).abs() / self.mu)
            .fold(0.0, f64::max);
        Check::new("volume_recovery", anchor, worst, self.rel_tol, worst <= self.rel_tol && self.aborted.is_none())
            .with_detail(format!("eps0 = {e0}"))
    }
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("empty eps list".into()));
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("eps list must be strictly decreasing in (0, 1)".into()));
    }
    Ok(())
}

impl SweepResult {
    fn empty(mu: f64, rel_tol: f64) -> Self {
        SweepResult { mu, rel_tol, rows: Vec::new(), eps0: None, aborted: None, results: Vec::new() }
    }

    /// Appends one solve; returns false once the sweep has to stop.
    fn record(&mut self, eps: f64, solved: Result<SolveResult>, masks: &DomainMasks, p: &PenaltyParams) -> bool {
        let res = match solved {
            Ok(r) => r,
            Err(e) => {
                self.aborted = Some(format!("eps = {eps}: {e}"));
                return false;
            }
        };
        let pe = PenaltyParams { eps, ..*p };
        let lambda_mean = extract_free_boundary(&res.u, masks, &pe)
            .and_then(|fb| estimate_lambda(&res.u, masks, &pe, &fb))
            .ok()
            .map(|l| l.mean);
        self.rows.push(SweepRow {
            eps,
            exterior_volume: res.exterior_volume,
            energy: res.energy,
            penalized_energy: res.penalized_energy,
            lambda_mean,
            support_radius: support_radius(&res.u, &pe),
            converged: res.converged,
        });
        let converged = res.converged;
        self.results.push(res);
        if !converged {
            self.aborted = Some(format!("eps = {eps}: solve did not converge"));
        }
        converged
    }

    /// Assembles a sweep from independently computed solves, in list order.
    pub fn from_solves(
        masks: &DomainMasks,
        p: &PenaltyParams,
        rel_tol: f64,
        solves: Vec<(f64, Result<SolveResult>)>,
    ) -> Result<Self> {
        let eps: Vec<f64> = solves.iter().map(|s| s.0).collect();
        check_eps_list(&eps)?;
        let mut out = Self::empty(p.mu, rel_tol);
        for (eps, solved) in solves {
            if !out.record(eps, solved, masks, p) {
                break;
            }
        }
        out.detect_eps0();
        Ok(out)
    }
}

/// One solve per `ε` of a strictly decreasing list, each warm-started from the last.
pub fn epsilon_sweep(
    spec: &DomainSpec,
    masks: &DomainMasks,
    obstacles: &ObstaclePair,
    eps_list: &[f64],
    p: &PenaltyParams,
    sp: &SolveParams,
    rel_tol: f64,
) -> Result<SweepResult> {
    check_eps_list(eps_list)?;
    let mut out = SweepResult::empty(p.mu, rel_tol);
    for &eps in eps_list {
        let pe = PenaltyParams { eps, ..*p };
        let solved = solve_penalized_from(spec, masks, obstacles, &pe, sp, out.results.last().map(|r| &r.u));
        if !out.record(eps, solved, masks, p) {
            break;
        }
    }
    out.detect_eps0();
    Ok(out)
}

pub const LIPSCHITZ_RATIO_MAX: f64 = 1.1;

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzStudy {
    pub resolutions: Vec<usize>,
    pub max_gradients: Vec<f64>,
    pub check: Check,
    #[serde(skip)]
    pub results: Vec<SolveResult>,
}

/// Stabilization of a sequence of maximal discrete gradients under refinement.
pub fn check_lipschitz_sequence(max_gradients: &[f64]) -> Check {
    let anchor = "u is Lipschitz continuous in R^n";
    let n = max_gradients.len();
    let ratio = if n < 2 {
        f64::NAN
    } else if max_gradients[n - 1] == 0.0 && max_gradients[n - 2] == 0.0 {
        1.0
    } else {
        max_gradients[n - 1] / max_gradients[n - 2]
    };
    Check::new("lipschitz", anchor, ratio, LIPSCHITZ_RATIO_MAX, ratio <= LIPSCHITZ_RATIO_MAX)
        .with_detail(format!("max |grad u| per resolution: {max_gradients:?}"))
}

/// Largest forward-difference gradient over the lattice, away from corners of `D`.
pub fn max_gradient(u: &ScalarField, shape: &Shape, corner_exclusion: f64) -> f64 {
    let g = *u.grid();
    let corners = shape.corners();
    u.max_forward_gradient(|k| {
        let q = g.point(k);
        corners.iter().all(|c| (q[0] - c[0]).hypot(q[1] - c[1]) >= corner_exclusion)
    })
}

/// Solves the same problem on each resolution and checks that the maximal gradient
/// settles. Corners of `D` are excluded within `corner_exclusion`.
pub fn check_lipschitz_refinement(
    spec: &DomainSpec,
    kind: &ObstacleKind,
    p: &PenaltyParams,
    sp: &SolveParams,
    resolutions: &[usize],
    corner_exclusion: f64,
) -> Result<LipschitzStudy> {
    if resolutions.len() < 3 || resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("need at least 3 increasing resolutions".into()));
    }
    let mut grads = Vec::new();
    let mut results = Vec::new();
    for &res in resolutions {
        let g = build_grid(spec, res)?;
        let m = rasterize(spec, &g)?;
        let o = make_obstacles(kind, &m)?;
        let r = solve_penalized(spec, &m, &o, p, sp)?;
        grads.push(max_gradient(&r.u, &spec.shape, corner_exclusion));
        results.push(r);
    }
    let check = check_lipschitz_sequence(&grads);
    Ok(LipschitzStudy { resolutions: resolutions.to_vec(), max_gradients: grads, check, results })
}

pub const FLAT_EXPONENT_MIN: f64 = 0.4;
const MIN_WINDOW_NODES: usize = 8;
const FACE_CENTRES: usize = 9;

#[derive(Debug, Clone, Serialize)]
pub struct FlatExponent {
    /// Fitted exponent on the `Ω` side of the face.
    pub outside: f64,
    /// Fitted exponent on the `D` side.
    pub inside: f64,
    pub check: Check,
}

/// Hölder exponent of `∇u` at a flat face, one side at a time.
///
/// For a `C^{1,α}` profile the second difference `u(x₀+2tν) - 2u(x₀+tν) + u(x₀)` along
/// the normal grows like `t^{1+α}`. `x₀` is the first lattice node on the given side, so
/// the window never straddles the face; the fit accounts for the offset of `x₀` from the
/// face. Profiles that are linear up to round-off report 1. The reported exponent is the
/// median over several centres along the face, each at least `4 window` from its ends.
pub fn check_flat_boundary_exponent(u: &ScalarField, masks: &DomainMasks, face: &Face, window: f64) -> Result<FlatExponent> {
    let g = *u.grid();
    let steps = (window / g.h).floor() as usize;
    if steps < MIN_WINDOW_NODES {
        return Err(Error::InvalidParameter(format!("window spans {steps} nodes; need at least {MIN_WINDOW_NODES}")));
    }
    let len = face.length();
    let margin = 4.0 * window;
    if len <= 2.0 * margin {
        return Err(Error::InvalidParameter(format!("face of length {len:.4} leaves no room {margin:.4} away from its corners")));
    }
    let tangent = [(face.end[0] - face.start[0]) / len, (face.end[1] - face.start[1]) / len];
    let centres: Vec<[f64; 2]> = (0..FACE_CENTRES)
        .map(|i| {
            let s = margin + (len - 2.0 * margin) * i as f64 / (FACE_CENTRES - 1) as f64;
            [face.start[0] + s * tangent[0], face.start[1] + s * tangent[1]]
        })
        .collect();
    let nu = face.outward;
    let fit_side = |sign: f64, on_side: &dyn Fn(usize) -> bool| -> Result<f64> {
        let dir = [sign * nu[0], sign * nu[1]];
        let half = steps / 2;
        let mut fits = Vec::with_capacity(centres.len());
        for c in &centres {
            // first node on this side along the normal line through c
            let start = (0..=2 * steps)
                .map(|k| {
                    let t = k as f64 * 0.5 * g.h;
                    [c[0] + t * dir[0], c[1] + t * dir[1]]
                })
                .find_map(|q| {
                    let k = nearest_node(&g, q)?;
                    on_side(k).then(|| g.point(k))
                })
                .ok_or_else(|| Error::InvalidParameter("no lattice node next to the face".into()))?;
            let offset = ((start[0] - c[0]) * dir[0] + (start[1] - c[1]) * dir[1]).max(0.0);
            let at = |t: f64| u.sample([start[0] + t * dir[0], start[1] + t * dir[1]]);
            let u0 = at(0.0);
            let d: Vec<f64> = (1..=half)
                .map(|m| {
                    let t = m as f64 * g.h;
                    (at(2.0 * t) - 2.0 * at(t) + u0).abs()
                })
                .collect();
            fits.push(exponent_fit(&d, g.h, offset, u0.abs()));
        }
        fits.sort_by(f64::total_cmp);
        Ok(fits[fits.len() / 2])
    };
    let outside = fit_side(1.0, &|k| masks.is_omega(k))?;
    let inside = fit_side(-1.0, &|k| masks.is_d(k))?;
    let measured = outside.min(inside);
    let check = Check::new("flat_exponent", "grad u is 1/2-Holder up to a flat face", measured, FLAT_EXPONENT_MIN, measured >= FLAT_EXPONENT_MIN)
        .with_detail(format!("outside {outside:.4}, inside {inside:.4}"));
    Ok(FlatExponent { outside, inside, check })
}

fn nearest_node(g: &crate::grid::Grid, q: [f64; 2]) -> Option<usize> {
    let (fi, fj) = g.locate(q);
    let (i, j) = (fi.round(), fj.round());
    if i < 0.0 || j < 0.0 || i >= g.nx as f64 || j >= g.ny as f64 {
        return None;
    }
    Some(g.index(i as usize, j as usize))
}

/// Exponent from second differences `d[m]` at `t = (m+1) h`, taken from a base point
/// `offset` past the face.
///
/// The model is `C ((s+2t)^β - 2 (s+t)^β + s^β)`, the second difference of `|x|^β` seen
/// from `s`; `C` is fitted in log space in closed form and `β ∈ (1, 2]` by scanning.
fn exponent_fit(d: &[f64], h: f64, offset: f64, scale: f64) -> f64 {
    let floor = 1e-11 * scale.max(1.0);
    let pts: Vec<(f64, f64)> = d
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > floor)
        .map(|(m, v)| ((m + 1) as f64 * h, v.ln()))
        .collect();
    if pts.len() < 3 {
        return 1.0;
    }
    let s = offset;
    let misfit = |beta: f64| {
        let r: Vec<f64> = pts
            .iter()
            .map(|&(t, lv)| lv - ((s + 2.0 * t).powf(beta) - 2.0 * (s + t).powf(beta) + s.powf(beta)).ln())
            .collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
    };
    let best = (1..=1000)
        .map(|i| 1.0 + i as f64 / 1000.0)
        .map(|b| (b, misfit(b)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    best.0 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{HistoryEntry, Phase};

    fn rect_case(res: usize) -> (DomainSpec, DomainMasks) {
        let spec = DomainSpec::new(Shape::Rect { min: [-1.0, -1.0], max: [1.0, 1.0] }, 3.0, 2.0).unwrap();
        let g = build_grid(&spec, res).unwrap();
        let m = rasterize(&spec, &g).unwrap();
        (spec, m)
    }

    fn fake_result(u: ScalarField, sup_phi: f64) -> SolveResult {
        SolveResult {
            energy: 0.0,
            penalized_energy: 0.0,
            exterior_volume: 0.0,
            initial_penalized_energy: 1.0,
            iterations: 1,
            converged: true,
            history: Vec::new(),
            penalty: PenaltyParams::new(0.1, 2.0, sup_phi).unwrap(),
            sup_phi,
            u,
        }
    }

    #[test]
    fn max_principle_names_the_offending_node() {
        let (_, m) = rect_case(65);
        let g = *m.grid();
        let mut u = ScalarField::zeros(g);
        assert!(check_max_principle(&fake_result(u.clone(), 1.0)).pass);
        u.values_mut()[g.index(10, 12)] = 2.0;
        let c = check_max_principle(&fake_result(u, 1.0));
        assert!(!c.pass);
        assert!(c.detail.unwrap().contains("(10, 12)"));
    }

    #[test]
    fn max_principle_scans_history() {
        let (_, m) = rect_case(65);
        let mut r = fake_result(ScalarField::zeros(*m.grid()), 1.0);
        r.history.push(HistoryEntry {
            phase: Phase::Continuation,
            stage: 0,
            iteration: 1,
            tau: 0.1,
            objective: 0.0,
            penalized: 0.0,
            energy: 0.0,
            volume: 0.0,
            u_min: -1e-3,
            u_max: 0.5,
        });
        assert!(!check_max_principle(&r).pass);
    }

    #[test]
    fn harmonicity_on_zero_and_noise() {
        let (_, m) = rect_case(65);
        let g = *m.grid();
        assert!(check_harmonicity(&fake_result(ScalarField::zeros(g), 1.0), &m).pass);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = ScalarField::from_fn(g, |_, _| rng.gen_range(0.1..0.9));
        assert!(!check_harmonicity(&fake_result(noise, 1.0), &m).pass);
    }

    #[test]
    fn volume_bound_cases() {
        let (_, m) = rect_case(65);
        let g = *m.grid();
        let mut r = fake_result(ScalarField::zeros(g), 1.0);
        assert!(check_volume_bound(&r, None).pass);
        r.exterior_volume = m.omega_measure;
        assert!(!check_volume_bound(&r, Some(1.0)).pass);
    }

    #[test]
    fn lipschitz_sequence() {
        assert!(check_lipschitz_sequence(&[0.0, 0.0, 0.0]).pass);
        assert!(check_lipschitz_sequence(&[1.3, 1.4, 1.42]).pass);
        // a jump has gradient ~ 1/h
        assert!(!check_lipschitz_sequence(&[32.0, 64.0, 128.0]).pass);
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let (spec, m) = rect_case(33);
        let o = make_obstacles(&ObstacleKind::Constant { lower: 1.0, upper: 2.0 }, &m).unwrap();
        let p = PenaltyParams::new(0.1, 2.0, 1.0).unwrap();
        let sp = SolveParams::default();
        assert!(epsilon_sweep(&spec, &m, &o, &[], &p, &sp, 0.01).is_err());
        assert!(epsilon_sweep(&spec, &m, &o, &[0.1, 0.2], &p, &sp, 0.01).is_err());
    }

    #[test]
    fn eps0_and_lambda_band_from_rows() {
        let row = |eps: f64, v: f64, l: Option<f64>| SweepRow {
            eps,
            exterior_volume: v,
            energy: 1.0,
            penalized_energy: 1.0,
            lambda_mean: l,
            support_radius: 1.0,
            converged: true,
        };
        let mut s = SweepResult::empty(10.0, 0.01);
        s.rows = vec![row(0.5, 10.5, Some(1.0)), row(0.2, 10.05, None), row(0.1, 9.95, Some(1.2)), row(0.05, 10.0, Some(0.9))];
        s.detect_eps0();
        assert_eq!(s.eps0, Some(0.2));
        assert!(s.check().pass);
        assert!(s.lambda_check().pass);
        assert!((s.lambda_ratio().unwrap() - 1.2 / 0.9).abs() < 1e-12);
        s.rows.push(row(0.02, 11.0, Some(4.0)));
        s.detect_eps0();
        assert_eq!(s.eps0, None);
        assert!(!s.check().pass);
        assert!(!s.lambda_check().pass);
    }

    fn face_field(res: usize, profile: impl Fn(f64) -> f64) -> (DomainMasks, ScalarField, Face) {
        let (spec, m) = rect_case(res);
        // right face x = 1, outward normal +x; profile in the signed distance x - 1
        let face = spec.shape.faces().into_iter().find(|f| f.outward == [1.0, 0.0]).unwrap();
        let u = ScalarField::from_fn(*m.grid(), |x, _| profile(x - 1.0));
        (m, u, face)
    }

    #[test]
    fn calibration_three_halves() {
        let (m, u, face) = face_field(385, |s| s.abs().powf(1.5));
        let e = check_flat_boundary_exponent(&u, &m, &face, 0.15).unwrap();
        assert!((e.outside - 0.5).abs() < 0.05, "{}", e.outside);
        assert!((e.inside - 0.5).abs() < 0.05, "{}", e.inside);
        assert!(e.check.pass);
    }

    #[test]
    fn linear_profile_saturates() {
        let (m, u, face) = face_field(385, |s| 1.0 - 0.5 * s);
        let e = check_flat_boundary_exponent(&u, &m, &face, 0.15).unwrap();
        assert_eq!((e.outside, e.inside), (1.0, 1.0));
    }

    #[test]
    fn kink_in_window_fails() {
        // gradient jump a few nodes out from the face
        let (m, u, face) = face_field(385, |s| (s - 0.03).abs());
        let e = check_flat_boundary_exponent(&u, &m, &face, 0.15).unwrap();
        assert!(e.outside < 0.1, "{}", e.outside);
        assert!(!e.check.pass);
    }

    #[test]
    fn short_window_rejected() {
        let (m, u, face) = face_field(65, |s| s);
        assert!(check_flat_boundary_exponent(&u, &m, &face, 0.2).is_err());
    }
}
