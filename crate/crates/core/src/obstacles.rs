//! Lower/upper obstacle presets and their validation against the standing hypotheses
//! (`0 < φ ≤ ψ` in `D`, `φ < ψ` on the boundary band).

use serde::{Deserialize, Serialize};

use crate::domain::{DomainMasks, NodeClass};
use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Analytic obstacle descriptors. Radial presets are centered at `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ObstacleKind {
    /// `φ ≡ lower`, `ψ ≡ upper`.
    Constant { lower: f64, upper: f64 },
    /// `φ = lower_peak - lower_curvature |x-c|²`, `ψ = upper_peak - upper_curvature |x-c|²`.
    Paraboloid {
        #[serde(default)]
        center: [f64; 2],
        lower_peak: f64,
        lower_curvature: f64,
        upper_peak: f64,
        #[serde(default)]
        upper_curvature: f64,
    },
    /// `φ ≡ value`, `ψ = value + rise (|x-c| - contact_radius)₊³`, so the pair
    /// coincides on the disk of radius `contact_radius`.
    Touching {
        #[serde(default)]
        center: [f64; 2],
        value: f64,
        contact_radius: f64,
        rise: f64,
    },
    /// Lipschitz cone `φ = peak - slope |x-c|` under a constant `ψ ≡ upper`.
    Tent {
        #[serde(default)]
        center: [f64; 2],
        peak: f64,
        slope: f64,
        upper: f64,
    },
    /// Per-node values supplied by the caller.
    Sampled,
}

/// Value, gradient and Hessian of one obstacle at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: [f64; 2],
    /// `None` where the obstacle is not twice differentiable.
    pub hessian: Option<[[f64; 2]; 2]>,
}

impl Jet {
    pub fn laplacian(&self, dim: usize) -> Option<f64> {
        self.hessian.map(|h| if dim == 1 { h[0][0] } else { h[0][0] + h[1][1] })
    }

    fn hessian_norm(&self) -> Option<f64> {
        // Frobenius norm
        self.hessian
            .map(|h| (h[0][0] * h[0][0] + h[0][1] * h[0][1] + h[1][0] * h[1][0] + h[1][1] * h[1][1]).sqrt())
    }
}

fn offset(p: [f64; 2], c: [f64; 2], dim: usize) -> [f64; 2] {
    if dim == 1 {
        [p[0] - c[0], 0.0]
    } else {
        [p[0] - c[0], p[1] - c[1]]
    }
}

fn paraboloid(peak: f64, k: f64, d: [f64; 2]) -> Jet {
    Jet {
        value: peak - k * (d[0] * d[0] + d[1] * d[1]),
        gradient: [-2.0 * k * d[0], -2.0 * k * d[1]],
        hessian: Some([[-2.0 * k, 0.0], [0.0, -2.0 * k]]),
    }
}

fn constant(v: f64) -> Jet {
    Jet { value: v, gradient: [0.0, 0.0], hessian: Some([[0.0; 2]; 2]) }
}

impl ObstacleKind {
    pub fn lower(&self, p: [f64; 2], dim: usize) -> Option<Jet> {
        Some(match *self {
            ObstacleKind::Constant { lower, .. } => constant(lower),
            ObstacleKind::Paraboloid { center, lower_peak, lower_curvature, .. } => {
                paraboloid(lower_peak, lower_curvature, offset(p, center, dim))
            }
            ObstacleKind::Touching { value, .. } => constant(value),
            ObstacleKind::Tent { center, peak, slope, .. } => {
                let d = offset(p, center, dim);
                let r = d[0].hypot(d[1]);
                if r == 0.0 {
                    Jet { value: peak, gradient: [0.0, 0.0], hessian: None }
                } else {
                    let (ux, uy) = (d[0] / r, d[1] / r);
                    let hessian = if dim == 1 {
                        Some([[0.0; 2]; 2])
                    } else {
                        // -slope * (I - n n^T) / r
                        let s = -slope / r;
                        Some([[s * (1.0 - ux * ux), -s * ux * uy], [-s * ux * uy, s * (1.0 - uy * uy)]])
                    };
                    Jet { value: peak - slope * r, gradient: [-slope * ux, -slope * uy], hessian }
                }
            }
            ObstacleKind::Sampled => return None,
        })
    }

    pub fn upper(&self, p: [f64; 2], dim: usize) -> Option<Jet> {
        Some(match *self {
            ObstacleKind::Constant { upper, .. } => constant(upper),
            ObstacleKind::Paraboloid { center, upper_peak, upper_curvature, .. } => {
                paraboloid(upper_peak, upper_curvature, offset(p, center, dim))
            }
            ObstacleKind::Touching { center, value, contact_radius, rise } => {
                let d = offset(p, center, dim);
                let r = d[0].hypot(d[1]);
                let s = r - contact_radius;
                if s <= 0.0 {
                    constant(value)
                } else {
                    // g(r) = rise s^3; grad = g' n; hess = g'' n n^T + g'/r (I - n n^T)
                    let g1 = 3.0 * rise * s * s;
                    let g2 = 6.0 * rise * s;
                    let (nx, ny) = (d[0] / r, d[1] / r);
                    let t = if dim == 1 { 0.0 } else { g1 / r };
                    Jet {
                        value: value + rise * s * s * s,
                        gradient: [g1 * nx, g1 * ny],
                        hessian: Some([
                            [g2 * nx * nx + t * (1.0 - nx * nx), (g2 - t) * nx * ny],
                            [(g2 - t) * nx * ny, g2 * ny * ny + t * (1.0 - ny * ny)],
                        ]),
                    }
                }
            }
            ObstacleKind::Tent { upper, .. } => constant(upper),
            ObstacleKind::Sampled => return None,
        })
    }

    /// Finiteness and sign checks on the preset parameters.
    pub fn check_params(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidObstacles(m.to_string()));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            ObstacleKind::Constant { lower, upper } => {
                if !finite(&[lower, upper]) {
                    return bad("constant obstacle values must be finite");
                }
            }
            ObstacleKind::Paraboloid { center, lower_peak, lower_curvature, upper_peak, upper_curvature } => {
                if !finite(&[center[0], center[1], lower_peak, lower_curvature, upper_peak, upper_curvature]) {
                    return bad("paraboloid parameters must be finite");
                }
            }
            ObstacleKind::Touching { center, value, contact_radius, rise } => {
                if !finite(&[center[0], center[1], value, contact_radius, rise]) || contact_radius < 0.0 || rise <= 0.0 {
                    return bad("touching pair needs contact_radius >= 0 and rise > 0");
                }
            }
            ObstacleKind::Tent { center, peak, slope, upper } => {
                if !finite(&[center[0], center[1], peak, slope, upper]) || slope < 0.0 {
                    return bad("tent needs a nonnegative slope");
                }
            }
            ObstacleKind::Sampled => {}
        }
        Ok(())
    }
}

/// Obstacle fields on the whole lattice; only `D` and the boundary band are meaningful.
#[derive(Debug, Clone)]
pub struct ObstaclePair {
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub kind: ObstacleKind,
    sup_phi: f64,
}

impl ObstaclePair {
    /// `sup_D φ` over the nodes of `D`.
    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }

    /// Wraps caller-supplied fields, enforcing the same hypotheses as the presets.
    pub fn from_fields(phi: ScalarField, psi: ScalarField, masks: &DomainMasks) -> Result<Self> {
        Self::validated(phi, psi, ObstacleKind::Sampled, masks)
    }

    fn validated(phi: ScalarField, psi: ScalarField, kind: ObstacleKind, masks: &DomainMasks) -> Result<Self> {
        let g = masks.grid();
        if !phi.grid().same_lattice(g) || !psi.grid().same_lattice(g) {
            return Err(Error::InvalidObstacles("obstacle fields live on a different grid".into()));
        }
        let mut sup_phi = f64::NEG_INFINITY;
        for k in 0..g.len() {
            let (lo, hi) = (phi.values()[k], psi.values()[k]);
            let (i, j) = g.ij(k);
            match masks.class(k) {
                NodeClass::Inner => {
                    if lo > hi {
                        return Err(Error::InvalidObstacles(format!(
                            "phi > psi at node ({i}, {j}) of D: {lo} > {hi}"
                        )));
                    }
                    sup_phi = sup_phi.max(lo);
                }
                NodeClass::Band => {
                    if lo >= hi {
                        return Err(Error::InvalidObstacles(format!(
                            "phi < psi fails on the boundary band at ({i}, {j}): {lo} >= {hi}"
                        )));
                    }
                }
                _ => continue,
            }
            if lo <= 0.0 {
                return Err(Error::InvalidObstacles(format!("phi must be positive on the closure of D; phi({i}, {j}) = {lo}")));
            }
        }
        Ok(Self { phi, psi, kind, sup_phi })
    }

    /// Analytic jets where the preset has them.
    pub fn lower_jet(&self, p: [f64; 2]) -> Option<Jet> {
        self.kind.lower(p, self.phi.grid().dim())
    }

    pub fn upper_jet(&self, p: [f64; 2]) -> Option<Jet> {
        self.kind.upper(p, self.phi.grid().dim())
    }

    /// `‖φ‖_{C²} + ‖ψ‖_{C²}` over the nodes of `D`, or `None` if a preset is not `C²` there.
    pub fn c2_norm(&self, masks: &DomainMasks) -> Option<f64> {
        let g = masks.grid();
        let mut acc = [[0.0f64; 3]; 2];
        for k in masks.d_nodes() {
            let p = g.point(k);
            for (slot, jet) in [self.lower_jet(p)?, self.upper_jet(p)?].into_iter().enumerate() {
                acc[slot][0] = acc[slot][0].max(jet.value.abs());
                acc[slot][1] = acc[slot][1].max(jet.gradient[0].hypot(jet.gradient[1]));
                acc[slot][2] = acc[slot][2].max(jet.hessian_norm()?);
            }
        }
        Some(acc.iter().flatten().sum())
    }

    /// `‖Δφ‖_∞` over `D` from the analytic descriptor, or from the discrete Laplacian for sampled fields.
    pub fn lower_laplacian_sup(&self, masks: &DomainMasks) -> f64 {
        let g = masks.grid();
        masks
            .d_nodes()
            .map(|k| {
                self.lower_jet(g.point(k))
                    .and_then(|j| j.laplacian(g.dim()))
                    .unwrap_or_else(|| self.phi.laplacian_at(k))
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Evaluates a preset on the lattice and validates it.
pub fn make_obstacles(kind: &ObstacleKind, masks: &DomainMasks) -> Result<ObstaclePair> {
    kind.check_params()?;
    if matches!(kind, ObstacleKind::Sampled) {
        return Err(Error::InvalidObstacles("sampled obstacles are built with ObstaclePair::from_fields".into()));
    }
    let g = *masks.grid();
    let dim = g.dim();
    let eval = |upper: bool| {
        ScalarField::from_fn(g, |x, y| {
            let jet = if upper { kind.upper([x, y], dim) } else { kind.lower([x, y], dim) };
            jet.map(|j| j.value).unwrap_or(0.0)
        })
    };
    ObstaclePair::validated(eval(false), eval(true), kind.clone(), masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, rasterize, DomainSpec, Shape};

    fn masks() -> DomainMasks {
        let spec = DomainSpec::new(Shape::Disk { center: [0.0, 0.0], radius: 1.0 }, 3.0, 2.0).unwrap();
        let g = build_grid(&spec, 49).unwrap();
        rasterize(&spec, &g).unwrap()
    }

    #[test]
    fn constant_pair_values() {
        let m = masks();
        let o = make_obstacles(&ObstacleKind::Constant { lower: 1.0, upper: 2.0 }, &m).unwrap();
        assert!(m.d_nodes().all(|k| o.phi.values()[k] == 1.0 && o.psi.values()[k] == 2.0));
        assert_eq!(o.sup_phi(), 1.0);
    }

    #[test]
    fn equal_constants_violate_boundary_gap() {
        let m = masks();
        let err = make_obstacles(&ObstacleKind::Constant { lower: 1.0, upper: 1.0 }, &m).unwrap_err();
        assert!(err.to_string().contains("boundary band"), "{err}");
    }

    #[test]
    fn nonpositive_lower_obstacle_rejected() {
        let m = masks();
        assert!(make_obstacles(&ObstacleKind::Constant { lower: 0.0, upper: 1.0 }, &m).is_err());
        let cap = ObstacleKind::Paraboloid {
            center: [0.0, 0.0],
            lower_peak: 0.5,
            lower_curvature: 1.0,
            upper_peak: 3.0,
            upper_curvature: 0.0,
        };
        assert!(make_obstacles(&cap, &m).is_err());
    }

    #[test]
    fn touching_pair_coincides_on_inner_disk_only() {
        let m = masks();
        let kind = ObstacleKind::Touching { center: [0.0, 0.0], value: 1.0, contact_radius: 0.5, rise: 4.0 };
        let o = make_obstacles(&kind, &m).unwrap();
        let g = m.grid();
        for k in m.d_nodes() {
            let [x, y] = g.point(k);
            let same = o.phi.values()[k] == o.psi.values()[k];
            assert_eq!(same, x.hypot(y) <= 0.5, "node at r = {}", x.hypot(y));
        }
        for k in m.nodes(NodeClass::Band) {
            assert!(o.phi.values()[k] < o.psi.values()[k]);
        }
    }

    #[test]
    fn paraboloid_laplacian_is_constant() {
        let kind = ObstacleKind::Paraboloid {
            center: [0.0, 0.0],
            lower_peak: 2.0,
            lower_curvature: 0.5,
            upper_peak: 3.0,
            upper_curvature: 0.0,
        };
        let j = kind.lower([0.3, -0.2], 2).unwrap();
        assert_eq!(j.laplacian(2), Some(-2.0));
        assert_eq!(kind.lower([0.3, 0.0], 1).unwrap().laplacian(1), Some(-1.0));
    }

    #[test]
    fn touching_upper_jet_matches_finite_differences() {
        let kind = ObstacleKind::Touching { center: [0.1, 0.0], value: 1.0, contact_radius: 0.3, rise: 2.0 };
        let p = [0.6, 0.4];
        let jet = kind.upper(p, 2).unwrap();
        let f = |x: f64, y: f64| kind.upper([x, y], 2).unwrap().value;
        let e = 1e-4;
        let lap = (f(p[0] + e, p[1]) + f(p[0] - e, p[1]) + f(p[0], p[1] + e) + f(p[0], p[1] - e) - 4.0 * f(p[0], p[1])) / (e * e);
        assert!((jet.laplacian(2).unwrap() - lap).abs() < 1e-5, "{} vs {lap}", jet.laplacian(2).unwrap());
        let gx = (f(p[0] + e, p[1]) - f(p[0] - e, p[1])) / (2.0 * e);
        assert!((jet.gradient[0] - gx).abs() < 1e-6);
    }
}
