//! The discrete free boundary `∂{u > 0} \ D̄`, the gradient jump `λ_ε` along it, and
//! geometric scans of the positive phase.
//!
//! The sign pattern comes from `u > threshold`. On an edge from a positive node to a
//! dead one the crossing is where the line through the positive node and its inward
//! neighbour reaches the threshold. Interpolating the raw field instead puts every
//! crossing on a dead node and the contour becomes a staircase, which overestimates
//! length by several percent on curved boundaries.

mod contour;

pub use contour::{marching_squares, marching_squares_by, Chain};

use serde::Serialize;

use crate::domain::{DomainMasks, DomainSpec};
use crate::energy::PenaltyParams;
use crate::error::{Error, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Serialize)]
pub struct FreeBoundary {
    pub chains: Vec<Chain>,
    /// Outward unit normal (out of `{u > 0}`) at every point, chain by chain.
    pub normals: Vec<Vec<[f64; 2]>>,
    /// Total length (the number of points in 1D).
    pub length: f64,
}

impl FreeBoundary {
    pub fn samples(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.chains
            .iter()
            .zip(&self.normals)
            .flat_map(|(c, n)| c.points.iter().copied().zip(n.iter().copied()))
    }

    pub fn sample_count(&self) -> usize {
        self.chains.iter().map(|c| c.points.len()).sum()
    }
}

impl Serialize for Chain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Chain", 2)?;
        st.serialize_field("points", &self.points)?;
        st.serialize_field("closed", &self.closed)?;
        st.end()
    }
}

fn positive(u: &ScalarField, p: &PenaltyParams) -> Vec<bool> {
    u.values().iter().map(|v| *v > p.pos_threshold).collect()
}

/// Sign field for the contour tracer: `u - threshold` on the positive set, minus the
/// mean positive-neighbour excess on dead nodes next to it (for saddle decisions).
fn reflected(u: &ScalarField, pos: &[bool], p: &PenaltyParams) -> Vec<f64> {
    let g = u.grid();
    (0..g.len())
        .map(|k| {
            if pos[k] {
                return u.values()[k] - p.pos_threshold;
            }
            let (mut s, mut n) = (0.0, 0.0);
            g.for_each_neighbor(k, |m| {
                if pos[m] {
                    s += u.values()[m] - p.pos_threshold;
                    n += 1.0;
                }
            });
            if n > 0.0 {
                -s / n
            } else {
                -1.0
            }
        })
        .collect()
}

/// Marching-squares contours of the positive set's exterior boundary.
pub fn extract_free_boundary(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams) -> Result<FreeBoundary> {
    let g = *u.grid();
    if !masks.grid().same_lattice(&g) {
        return Err(Error::InvalidParameter("field and masks live on different grids".into()));
    }
    let pos = positive(u, p);
    if !masks.omega_nodes().any(|k| pos[k]) {
        return Err(Error::NoFreeBoundary("u vanishes on the whole exterior region"));
    }
    for k in masks.omega_nodes().filter(|&k| pos[k]) {
        let mut reaches = false;
        g.for_each_neighbor(k, |m| reaches |= masks.is_outside(m));
        if reaches {
            return Err(Error::NoFreeBoundary("positive phase reaches the outer sphere"));
        }
    }
    let v = reflected(u, &pos, p);

    if g.dim() == 1 {
        let mut chains = Vec::new();
        let mut normals = Vec::new();
        for k in 0..g.len() - 1 {
            if pos[k] != pos[k + 1] {
                let t = v[k] / (v[k] - v[k + 1]);
                let x = g.x(k) + t * g.h;
                chains.push(Chain { points: vec![[x, 0.0]], closed: false });
                normals.push(vec![[if pos[k] { 1.0 } else { -1.0 }, 0.0]]);
            }
        }
        let length = chains.len() as f64;
        return Ok(FreeBoundary { chains, normals, length });
    }

    let thr = p.pos_threshold;
    let uv = u.values();
    // fraction of the way from positive `a` to dead `b`
    let reach = |a: usize, b: usize| -> f64 {
        let (ia, ja) = g.ij(a);
        let (ib, jb) = g.ij(b);
        let back = (2 * ia as isize - ib as isize, 2 * ja as isize - jb as isize);
        if back.0 < 0 || back.1 < 0 || back.0 >= g.nx as isize || back.1 >= g.ny as isize {
            return 0.5;
        }
        let c = g.index(back.0 as usize, back.1 as usize);
        if uv[c] > uv[a] && pos[c] {
            ((uv[a] - thr) / (uv[c] - uv[a])).clamp(0.0, 1.0)
        } else {
            0.5
        }
    };
    let crossing = |a: usize, b: usize| if pos[a] { reach(a, b) } else { 1.0 - reach(b, a) };
    let chains: Vec<Chain> = marching_squares_by(&g, &v, crossing)
        .into_iter()
        .filter(|c| c.points.iter().all(|&q| !masks.is_d(nearest(&g, q))))
        .collect();
    if chains.is_empty() {
        return Err(Error::NoFreeBoundary("no contour outside D"));
    }
    let vf = ScalarField::from_values(g, v)?;
    let normals = chains.iter().map(|c| chain_normals(c, &vf, g.h)).collect();
    let length = chains.iter().map(Chain::length).sum();
    Ok(FreeBoundary { chains, normals, length })
}

fn nearest(g: &crate::grid::Grid, q: [f64; 2]) -> usize {
    let (fi, fj) = g.locate(q);
    let i = (fi.round().max(0.0) as usize).min(g.nx - 1);
    let j = (fj.round().max(0.0) as usize).min(g.ny - 1);
    g.index(i, j)
}

/// Normals from the chord through the two neighbouring points, oriented downhill.
fn chain_normals(c: &Chain, v: &ScalarField, h: f64) -> Vec<[f64; 2]> {
    let n = c.points.len();
    (0..n)
        .map(|i| {
            let prev = if i > 0 { c.points[i - 1] } else if c.closed { c.points[n - 1] } else { c.points[i] };
            let next = if i + 1 < n { c.points[i + 1] } else if c.closed { c.points[0] } else { c.points[i] };
            let (tx, ty) = (next[0] - prev[0], next[1] - prev[1]);
            let len = tx.hypot(ty);
            if len == 0.0 {
                return [0.0, 0.0];
            }
            let mut nu = [ty / len, -tx / len];
            let p = c.points[i];
            let ahead = v.sample([p[0] + h * nu[0], p[1] + h * nu[1]]);
            let behind = v.sample([p[0] - h * nu[0], p[1] - h * nu[1]]);
            if ahead > behind {
                nu = [-nu[0], -nu[1]];
            }
            nu
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaEstimate {
    /// One value per usable contour point.
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Standard deviation over mean.
    pub cv: f64,
    /// Points whose stencil left the positive phase (thinner than `6h`) or entered `D`.
    pub skipped: usize,
}

/// `|∇u|` at each contour point from the inward one-sided quadratic through the
/// values at distances `2h`, `4h`, `6h` along `-ν`.
pub fn estimate_lambda(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams, fb: &FreeBoundary) -> Result<LambdaEstimate> {
    let g = *u.grid();
    let h = g.h;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (q, nu) in fb.samples() {
        if nu == [0.0, 0.0] {
            skipped += 1;
            continue;
        }
        let at = |s: f64| [q[0] - s * h * nu[0], q[1] - s * h * nu[1]];
        let usable = [2.0, 4.0, 6.0].iter().all(|&s| stencil_cell_positive(u, masks, p, at(s)));
        if !usable {
            skipped += 1;
            continue;
        }
        let (u1, u2, u3) = (u.sample(at(2.0)), u.sample(at(4.0)), u.sample(at(6.0)));
        samples.push((-1.25 * u1 + 2.0 * u2 - 0.75 * u3) / h);
    }
    if samples.is_empty() {
        return Err(Error::NoFreeBoundary("no contour point has a positive phase 6h deep"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(LambdaEstimate { mean, cv: var.sqrt() / mean.abs(), samples, skipped })
}

/// All lattice corners of the cell holding `q` lie in the positive part of `Ω_R`.
fn stencil_cell_positive(u: &ScalarField, masks: &DomainMasks, p: &PenaltyParams, q: [f64; 2]) -> bool {
    let g = u.grid();
    let (fi, fj) = g.locate(q);
    if fi < 0.0 || fj < 0.0 || fi > (g.nx - 1) as f64 || fj > (g.ny - 1) as f64 {
        return false;
    }
    let i0 = (fi.floor() as usize).min(g.nx - 2);
    let j0 = if g.ny == 1 { 0 } else { (fj.floor() as usize).min(g.ny - 2) };
    let di: &[usize] = &[0, 1];
    let dj: &[usize] = if g.ny == 1 { &[0] } else { &[0, 1] };
    dj.iter().all(|&b| {
        di.iter().all(|&a| {
            let k = g.index(i0 + a, j0 + b);
            masks.is_omega(k) && u.values()[k] > p.pos_threshold
        })
    })
}

/// Largest distance from the origin of a node with `u > threshold` (0 if none).
pub fn support_radius(u: &ScalarField, p: &PenaltyParams) -> f64 {
    let g = u.grid();
    (0..g.len())
        .filter(|&k| u.values()[k] > p.pos_threshold)
        .map(|k| {
            let q = g.point(k);
            if g.dim() == 1 {
                q[0].abs()
            } else {
                q[0].hypot(q[1])
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Clearance {
    pub pass: bool,
    /// Smallest `u` over the collar (`+∞` for an empty collar).
    pub min_value: f64,
    pub collar_nodes: usize,
    /// Lattice indices of the minimizing node.
    pub worst: Option<(usize, usize)>,
}

/// Whether `u > threshold` on every `Ω_R` node within `delta` of `D`.
pub fn clearance_check(u: &ScalarField, spec: &DomainSpec, masks: &DomainMasks, p: &PenaltyParams, delta: f64) -> Clearance {
    let g = u.grid();
    let mut min_value = f64::INFINITY;
    let mut worst = None;
    let mut collar_nodes = 0;
    for k in masks.omega_nodes() {
        if spec.distance_to_d(g.point(k)) < delta {
            collar_nodes += 1;
            if u.values()[k] < min_value {
                min_value = u.values()[k];
                worst = Some(g.ij(k));
            }
        }
    }
    Clearance { pass: min_value > p.pos_threshold, min_value, collar_nodes, worst }
}

#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyReport {
    /// `(centre, r, circle average)` of balls with average `≤ C √ε r` but positive
    /// values in `B_{r/2}`.
    pub violations: Vec<([f64; 2], f64, f64)>,
    /// Smallest `avg / (√ε r)` over balls with positive values in `B_{r/2}`; zero
    /// violations occur exactly for probes below it.
    pub empirical_constant: f64,
    pub balls: usize,
}

const CIRCLE_POINTS: usize = 64;
const SCAN_STRIDE: usize = 4;

/// Ball centres on a stride of `SCAN_STRIDE` nodes whose ball of radius `r` lies in `Ω_R`.
fn ball_centres<'a>(spec: &'a DomainSpec, masks: &'a DomainMasks, r: f64) -> impl Iterator<Item = usize> + 'a {
    let g = masks.grid();
    masks.omega_nodes().filter(move |&k| {
        let (i, j) = g.ij(k);
        let q = g.point(k);
        i % SCAN_STRIDE == 0
            && j % SCAN_STRIDE == 0
            && spec.distance_to_d(q) > r
            && q[0].hypot(q[1]) + r < spec.outer_radius
    })
}

fn circle_average(u: &ScalarField, c: [f64; 2], r: f64) -> f64 {
    let s: f64 = (0..CIRCLE_POINTS)
        .map(|t| {
            let a = 2.0 * std::f64::consts::PI * t as f64 / CIRCLE_POINTS as f64;
            u.sample([c[0] + r * a.cos(), c[1] + r * a.sin()])
        })
        .sum();
    s / CIRCLE_POINTS as f64
}

fn positive_within(u: &ScalarField, p: &PenaltyParams, c: [f64; 2], r: f64) -> bool {
    let g = u.grid();
    let (fi, fj) = g.locate(c);
    let span = (r / g.h).ceil() as isize + 1;
    let (ci, cj) = (fi.round() as isize, fj.round() as isize);
    for dj in -span..=span {
        for di in -span..=span {
            let (i, j) = (ci + di, cj + dj);
            if i < 0 || j < 0 || i >= g.nx as isize || j >= g.ny as isize {
                continue;
            }
            let k = g.index(i as usize, j as usize);
            let q = g.point(k);
            if (q[0] - c[0]).hypot(q[1] - c[1]) < r && u.values()[k] > p.pos_threshold {
                return true;
            }
        }
    }
    false
}

/// Circle-average probe of nondegeneracy over radii `{4h, 8h, 16h}`.
pub fn nondegeneracy_scan(
    u: &ScalarField,
    spec: &DomainSpec,
    masks: &DomainMasks,
    p: &PenaltyParams,
    c_probe: f64,
) -> NondegeneracyReport {
    let g = *u.grid();
    let scale = p.eps.sqrt();
    let mut violations = Vec::new();
    let mut empirical_constant = f64::INFINITY;
    let mut balls = 0;
    for r in [4.0 * g.h, 8.0 * g.h, 16.0 * g.h] {
        for k in ball_centres(spec, masks, r) {
            let c = g.point(k);
            if !positive_within(u, p, c, 0.5 * r) {
                continue;
            }
            balls += 1;
            let avg = circle_average(u, c, r);
            empirical_constant = empirical_constant.min(avg / (scale * r));
            if avg <= c_probe * scale * r {
                violations.push((c, r, avg));
            }
        }
    }
    NondegeneracyReport { violations, empirical_constant, balls }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityReport {
    /// Smallest `|B_r ∩ {u > 0}|_h / |B_r|_h` over the sampled balls (1 if none).
    pub min_ratio: f64,
    pub balls: usize,
}

/// Lower density of the positive phase in balls of radius `r` centred on it.
pub fn density_scan(u: &ScalarField, spec: &DomainSpec, masks: &DomainMasks, p: &PenaltyParams, r: f64) -> DensityReport {
    let g = *u.grid();
    let span = (r / g.h).ceil() as isize;
    let mut min_ratio: f64 = 1.0;
    let mut balls = 0;
    for k in ball_centres(spec, masks, r) {
        if u.values()[k] <= p.pos_threshold {
            continue;
        }
        balls += 1;
        let (ci, cj) = g.ij(k);
        let c = g.point(k);
        let (mut inside, mut pos) = (0usize, 0usize);
        for dj in -span..=span {
            for di in -span..=span {
                let (i, j) = (ci as isize + di, cj as isize + dj);
                if i < 0 || j < 0 || i >= g.nx as isize || j >= g.ny as isize {
                    continue;
                }
                let m = g.index(i as usize, j as usize);
                let q = g.point(m);
                if (q[0] - c[0]).hypot(q[1] - c[1]) < r {
                    inside += 1;
                    pos += usize::from(u.values()[m] > p.pos_threshold);
                }
            }
        }
        min_ratio = min_ratio.min(pos as f64 / inside as f64);
    }
    DensityReport { min_ratio, balls }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, rasterize, Shape};
    use crate::oracle::radial_solution;

    fn radial_case(res: usize) -> (DomainSpec, DomainMasks, ScalarField, PenaltyParams) {
        let mu = 3.0 * std::f64::consts::PI;
        let spec = DomainSpec::new(Shape::Disk { center: [0.0, 0.0], radius: 1.0 }, 3.0, mu).unwrap();
        let g = build_grid(&spec, res).unwrap();
        let m = rasterize(&spec, &g).unwrap();
        let u = radial_solution(1.0, 1.0, mu).unwrap().field(g, [0.0, 0.0]);
        (spec, m, u, PenaltyParams::new(0.05, mu, 1.0).unwrap())
    }

    #[test]
    fn radial_contour_length_and_lambda() {
        let (_, m, u, p) = radial_case(257);
        let fb = extract_free_boundary(&u, &m, &p).unwrap();
        assert_eq!(fb.chains.len(), 1);
        assert!(fb.chains[0].closed);
        let exact = 4.0 * std::f64::consts::PI;
        assert!((fb.length - exact).abs() / exact < 0.02, "{}", fb.length);
        let lam = estimate_lambda(&u, &m, &p, &fb).unwrap();
        let expect = 1.0 / (2.0 * 2f64.ln());
        assert!((lam.mean - expect).abs() / expect < 0.03, "{}", lam.mean);
        assert!(lam.cv < 0.05, "{}", lam.cv);
    }

    #[test]
    fn normals_point_out_of_the_support() {
        let (_, m, u, p) = radial_case(129);
        let fb = extract_free_boundary(&u, &m, &p).unwrap();
        for (q, nu) in fb.samples() {
            assert!((nu[0].hypot(nu[1]) - 1.0).abs() < 1e-12);
            assert!(q[0] * nu[0] + q[1] * nu[1] > 0.9 * q[0].hypot(q[1]));
        }
    }

    #[test]
    fn empty_and_saturated_fields_are_flagged() {
        let (_, m, u, p) = radial_case(65);
        let zero = ScalarField::zeros(*u.grid());
        assert!(matches!(extract_free_boundary(&zero, &m, &p), Err(Error::NoFreeBoundary(_))));
        let mut full = ScalarField::constant(*u.grid(), 0.5);
        for k in 0..full.values().len() {
            if m.is_outside(k) {
                full.values_mut()[k] = 0.0;
            }
        }
        assert!(matches!(extract_free_boundary(&full, &m, &p), Err(Error::NoFreeBoundary(_))));
    }

    #[test]
    fn two_bubbles_give_two_chains() {
        let (_, m, u, p) = radial_case(129);
        let g = *u.grid();
        let bump = |c: [f64; 2]| move |x: f64, y: f64| (0.3 - (x - c[0]).hypot(y - c[1])).max(0.0);
        let (b1, b2) = (bump([2.0, 0.0]), bump([-2.0, 0.0]));
        let f = ScalarField::from_fn(g, |x, y| b1(x, y) + b2(x, y));
        let fb = extract_free_boundary(&f, &m, &p).unwrap();
        assert_eq!(fb.chains.len(), 2);
        let _ = u;
    }

    #[test]
    fn support_radius_and_clearance() {
        let (spec, m, u, p) = radial_case(129);
        let r = support_radius(&u, &p);
        assert!(r < 2.0 && r > 2.0 - u.grid().h, "{r}");
        assert!(clearance_check(&u, &spec, &m, &p, 0.2).pass);
        assert!(!clearance_check(&u, &spec, &m, &p, 1.5).pass);
        let zero = ScalarField::zeros(*u.grid());
        let c = clearance_check(&zero, &spec, &m, &p, 0.2);
        assert!(!c.pass && c.min_value == 0.0);
        assert_eq!(support_radius(&zero, &p), 0.0);
    }

    #[test]
    fn nondegeneracy_and_density() {
        let (spec, m, u, p) = radial_case(129);
        let rep = nondegeneracy_scan(&u, &spec, &m, &p, 0.01);
        assert!(rep.violations.is_empty() && rep.balls > 0);
        let zero = ScalarField::zeros(*u.grid());
        assert!(nondegeneracy_scan(&zero, &spec, &m, &p, 10.0).violations.is_empty());

        let g = *u.grid();
        let mut bump = ScalarField::zeros(g);
        let k = g.index(g.nx / 2 + 40, g.ny / 2);
        bump.values_mut()[k] = p.eps.sqrt() * g.h;
        assert!(!nondegeneracy_scan(&bump, &spec, &m, &p, 1.0).violations.is_empty());

        let d = density_scan(&u, &spec, &m, &p, 0.25);
        assert!(d.min_ratio > 0.0 && d.min_ratio < 1.0);
    }

    #[test]
    fn linear_profile_gives_exact_slope() {
        let (_, m, u, p) = radial_case(129);
        let (c, d) = (1.0, 0.5);
        let slope = crate::oracle::slab_solution(c, d).unwrap().lambda();
        // pyramid: linear on each face, so faces reproduce c/d exactly
        let f = ScalarField::from_fn(*u.grid(), |x, y| c * (1.0 - (x - 2.0).abs().max(y.abs()) / d).max(0.0));
        let fb = extract_free_boundary(&f, &m, &p).unwrap();
        let mut lam = estimate_lambda(&f, &m, &p, &fb).unwrap().samples;
        lam.sort_by(f64::total_cmp);
        assert!((lam[lam.len() / 2] - slope).abs() < 1e-9, "{}", lam[lam.len() / 2]);
    }

    #[test]
    fn support_radius_of_single_node() {
        let (_, _, u, p) = radial_case(129);
        let g = *u.grid();
        let mut f = ScalarField::zeros(g);
        let i = ((2.7 - g.origin[0]) / g.h).round() as usize;
        let k = g.index(i, g.ny / 2);
        f.values_mut()[k] = 1.0;
        let q = g.point(k);
        assert!((support_radius(&f, &p) - q[0].hypot(q[1])).abs() < 1e-12);
        assert!((q[0] - 2.7).abs() <= g.h);
    }
}
