//! Geometry of the inner domain `D`, the ball `B_R` and their node-centered rasterization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Shape of the inner domain `D`. In 1D a disk is the interval `center.x ± radius`
/// and a rectangle is `[min.x, max.x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "params", rename_all = "lowercase")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Rect { min: [f64; 2], max: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

/// A straight piece of `∂D` (used by the flat-boundary probe).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Unit normal pointing out of `D`.
    pub outward: [f64; 2],
}

impl Face {
    pub fn midpoint(&self) -> [f64; 2] {
        [0.5 * (self.start[0] + self.end[0]), 0.5 * (self.start[1] + self.end[1])]
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }
}

impl Shape {
    /// Open inclusion test.
    pub fn contains(&self, p: [f64; 2], dim: usize) -> bool {
        match self {
            Shape::Disk { center, radius } => {
                if dim == 1 {
                    (p[0] - center[0]).abs() < *radius
                } else {
                    (p[0] - center[0]).hypot(p[1] - center[1]) < *radius
                }
            }
            Shape::Rect { min, max } => {
                let inx = p[0] > min[0] && p[0] < max[0];
                if dim == 1 {
                    inx
                } else {
                    inx && p[1] > min[1] && p[1] < max[1]
                }
            }
            Shape::Polygon { vertices } => {
                if dim == 1 {
                    let (lo, hi) = x_extent(vertices);
                    return p[0] > lo && p[0] < hi;
                }
                point_in_polygon(p, vertices) && distance_to_polyline(p, vertices) > 0.0
            }
        }
    }

    /// Euclidean distance from `p` to the closed set `D̄` (zero inside).
    pub fn distance(&self, p: [f64; 2], dim: usize) -> f64 {
        match self {
            Shape::Disk { center, radius } => {
                let r = if dim == 1 {
                    (p[0] - center[0]).abs()
                } else {
                    (p[0] - center[0]).hypot(p[1] - center[1])
                };
                (r - radius).max(0.0)
            }
            Shape::Rect { min, max } => {
                let dx = (min[0] - p[0]).max(p[0] - max[0]).max(0.0);
                if dim == 1 {
                    return dx;
                }
                let dy = (min[1] - p[1]).max(p[1] - max[1]).max(0.0);
                dx.hypot(dy)
            }
            Shape::Polygon { vertices } => {
                if dim == 1 {
                    let (lo, hi) = x_extent(vertices);
                    return (lo - p[0]).max(p[0] - hi).max(0.0);
                }
                if point_in_polygon(p, vertices) {
                    0.0
                } else {
                    distance_to_polyline(p, vertices)
                }
            }
        }
    }

    /// Exact measure of `D`.
    pub fn measure(&self, dim: usize) -> f64 {
        match self {
            Shape::Disk { radius, .. } => {
                if dim == 1 {
                    2.0 * radius
                } else {
                    PI * radius * radius
                }
            }
            Shape::Rect { min, max } => {
                if dim == 1 {
                    max[0] - min[0]
                } else {
                    (max[0] - min[0]) * (max[1] - min[1])
                }
            }
            Shape::Polygon { vertices } => {
                if dim == 1 {
                    let (lo, hi) = x_extent(vertices);
                    return hi - lo;
                }
                let n = vertices.len();
                let twice: f64 = (0..n)
                    .map(|k| {
                        let a = vertices[k];
                        let b = vertices[(k + 1) % n];
                        a[0] * b[1] - b[0] * a[1]
                    })
                    .sum();
                0.5 * twice.abs()
            }
        }
    }

    /// Smallest extent across `D`, used to judge whether a grid resolves it.
    pub fn width(&self, dim: usize) -> f64 {
        match self {
            Shape::Disk { radius, .. } => 2.0 * radius,
            Shape::Rect { min, max } => {
                if dim == 1 {
                    max[0] - min[0]
                } else {
                    (max[0] - min[0]).min(max[1] - min[1])
                }
            }
            Shape::Polygon { vertices } => {
                let (lo, hi) = x_extent(vertices);
                if dim == 1 {
                    return hi - lo;
                }
                let (ylo, yhi) = vertices
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[1]), b.max(v[1])));
                (hi - lo).min(yhi - ylo)
            }
        }
    }

    /// Largest distance from the origin to a point of `D̄`.
    pub fn max_radius(&self, dim: usize) -> f64 {
        match self {
            Shape::Disk { center, radius } => {
                if dim == 1 {
                    center[0].abs() + radius
                } else {
                    center[0].hypot(center[1]) + radius
                }
            }
            Shape::Rect { min, max } => {
                if dim == 1 {
                    return min[0].abs().max(max[0].abs());
                }
                let mut best: f64 = 0.0;
                for x in [min[0], max[0]] {
                    for y in [min[1], max[1]] {
                        best = best.max(x.hypot(y));
                    }
                }
                best
            }
            Shape::Polygon { vertices } => vertices
                .iter()
                .map(|v| if dim == 1 { v[0].abs() } else { v[0].hypot(v[1]) })
                .fold(0.0, f64::max),
        }
    }

    /// Straight faces of `∂D` (empty for disks).
    pub fn faces(&self) -> Vec<Face> {
        let ring: Vec<[f64; 2]> = match self {
            Shape::Disk { .. } => return Vec::new(),
            Shape::Rect { min, max } => vec![
                [min[0], min[1]],
                [max[0], min[1]],
                [max[0], max[1]],
                [min[0], max[1]],
            ],
            Shape::Polygon { vertices } => vertices.clone(),
        };
        let n = ring.len();
        let orientation: f64 = (0..n)
            .map(|k| {
                let a = ring[k];
                let b = ring[(k + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            .signum();
        (0..n)
            .map(|k| {
                let a = ring[k];
                let b = ring[(k + 1) % n];
                let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
                let len = tx.hypot(ty);
                // counter-clockwise rings have the outward normal on the right of each edge
                let outward = [orientation * ty / len, -orientation * tx / len];
                Face { start: a, end: b, outward }
            })
            .collect()
    }

    /// Corner points of `∂D` (empty for disks).
    pub fn corners(&self) -> Vec<[f64; 2]> {
        self.faces().iter().map(|f| f.start).collect()
    }

    fn validate(&self) -> Result<()> {
        match self {
            Shape::Disk { center, radius } => {
                if !(radius.is_finite() && *radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidDomain(format!("disk radius must be positive, got {radius}")));
                }
            }
            Shape::Rect { min, max } => {
                if !(min.iter().chain(max.iter()).all(|c| c.is_finite()) && min[0] < max[0] && min[1] < max[1]) {
                    return Err(Error::InvalidDomain("rectangle needs min < max on both axes".into()));
                }
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 || !vertices.iter().flatten().all(|c| c.is_finite()) {
                    return Err(Error::InvalidDomain("polygon needs at least 3 finite vertices".into()));
                }
                if self.measure(2) <= 0.0 {
                    return Err(Error::InvalidDomain("polygon has zero area".into()));
                }
            }
        }
        Ok(())
    }
}

fn x_extent(vertices: &[[f64; 2]]) -> (f64, f64) {
    vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[0]), b.max(v[0])))
}

fn point_in_polygon(p: [f64; 2], vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut k = n - 1;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[k]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        k = i;
    }
    inside
}

fn distance_to_polyline(p: [f64; 2], vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|k| segment_distance(p, vertices[k], vertices[(k + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Inner domain, outer radius `R` (ball centered at the origin) and target volume `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(rename = "R")]
    pub outer_radius: f64,
    pub mu: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    2
}

impl DomainSpec {
    pub fn new(shape: Shape, outer_radius: f64, mu: f64) -> Result<Self> {
        Self::with_dim(shape, outer_radius, mu, 2)
    }

    pub fn with_dim(shape: Shape, outer_radius: f64, mu: f64, dim: usize) -> Result<Self> {
        let spec = Self { shape, outer_radius, mu, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::InvalidDomain(format!("dimension must be 1 or 2, got {}", self.dim)));
        }
        self.shape.validate()?;
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidDomain(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.outer_radius.is_finite() && self.outer_radius > 0.0) {
            return Err(Error::InvalidDomain("outer radius must be positive".into()));
        }
        if self.shape.max_radius(self.dim) >= self.outer_radius {
            return Err(Error::InvalidDomain(format!(
                "closure of D must lie inside B_R (R = {})",
                self.outer_radius
            )));
        }
        let available = self.exterior_measure();
        if available <= self.mu {
            return Err(Error::InsufficientExteriorVolume { available, mu: self.mu });
        }
        Ok(())
    }

    /// Exact `|B_R \ D̄|`.
    pub fn exterior_measure(&self) -> f64 {
        let ball = if self.dim == 1 {
            2.0 * self.outer_radius
        } else {
            PI * self.outer_radius * self.outer_radius
        };
        ball - self.shape.measure(self.dim)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.shape.contains(p, self.dim)
    }

    pub fn distance_to_d(&self, p: [f64; 2]) -> f64 {
        self.shape.distance(p, self.dim)
    }

    pub fn in_ball(&self, p: [f64; 2]) -> bool {
        let r = if self.dim == 1 { p[0].abs() } else { p[0].hypot(p[1]) };
        r < self.outer_radius
    }

    /// Copy of this spec with another outer radius.
    pub fn with_outer_radius(&self, outer_radius: f64) -> Result<Self> {
        Self::with_dim(self.shape.clone(), outer_radius, self.mu, self.dim)
    }
}

/// Grid covering `[-R-2h, R+2h]^d` with `resolution` nodes per axis.
pub fn build_grid(spec: &DomainSpec, resolution: usize) -> Result<Grid> {
    spec.validate()?;
    if resolution <= 5 {
        return Err(Error::GridTooCoarse(format!(
            "resolution {resolution} leaves no room for B_R plus a 2-cell margin"
        )));
    }
    let r = spec.outer_radius;
    let h = 2.0 * r / (resolution - 5) as f64;
    let across = spec.shape.width(spec.dim) / h;
    if across < 4.0 {
        return Err(Error::GridTooCoarse(format!(
            "only {across:.2} nodes across D at h = {h:.4}; need at least 4"
        )));
    }
    let lo = -r - 2.0 * h;
    if spec.dim == 1 {
        Grid::new(resolution, 1, h, [lo, 0.0])
    } else {
        Grid::new(resolution, resolution, h, [lo, lo])
    }
}

/// Per-node classification; the four labels partition the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    /// Node of `D`.
    Inner,
    /// Node of `Ω_R` with a lattice neighbor in `D`.
    Band,
    /// Remaining nodes of `Ω_R`.
    Exterior,
    /// Node on or beyond `∂B_R`.
    Outside,
}

impl NodeClass {
    pub fn is_omega(self) -> bool {
        matches!(self, NodeClass::Band | NodeClass::Exterior)
    }
}

#[derive(Debug, Clone)]
pub struct DomainMasks {
    grid: Grid,
    labels: Vec<NodeClass>,
    /// Discrete `|D|_h`.
    pub d_measure: f64,
    /// Discrete `|Ω_R|_h`.
    pub omega_measure: f64,
}

impl DomainMasks {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[NodeClass] {
        &self.labels
    }

    #[inline]
    pub fn class(&self, idx: usize) -> NodeClass {
        self.labels[idx]
    }

    #[inline]
    pub fn is_d(&self, idx: usize) -> bool {
        self.labels[idx] == NodeClass::Inner
    }

    #[inline]
    pub fn is_omega(&self, idx: usize) -> bool {
        self.labels[idx].is_omega()
    }

    #[inline]
    pub fn is_outside(&self, idx: usize) -> bool {
        self.labels[idx] == NodeClass::Outside
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    pub fn nodes(&self, class: NodeClass) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(move |(_, &c)| c == class).map(|(k, _)| k)
    }

    pub fn omega_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, c)| c.is_omega()).map(|(k, _)| k)
    }

    pub fn d_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes(NodeClass::Inner)
    }

    /// Builds masks from explicit labels; the band is recomputed from `Inner` adjacency.
    pub fn from_labels(grid: Grid, mut labels: Vec<NodeClass>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::InvalidDomain("label count does not match grid".into()));
        }
        for k in 0..labels.len() {
            if labels[k].is_omega() {
                let mut touches = false;
                grid.for_each_neighbor(k, |n| touches |= labels[n] == NodeClass::Inner);
                labels[k] = if touches { NodeClass::Band } else { NodeClass::Exterior };
            }
        }
        let vol = grid.cell_volume();
        let d_count = labels.iter().filter(|c| **c == NodeClass::Inner).count();
        let omega_count = labels.iter().filter(|c| c.is_omega()).count();
        if d_count == 0 {
            return Err(Error::GridTooCoarse("no grid node falls inside D".into()));
        }
        Ok(Self {
            grid,
            labels,
            d_measure: d_count as f64 * vol,
            omega_measure: omega_count as f64 * vol,
        })
    }
}

/// Node-centered rasterization: a node is in `D` iff its coordinates are.
pub fn rasterize(spec: &DomainSpec, grid: &Grid) -> Result<DomainMasks> {
    spec.validate()?;
    if (grid.dim() == 1) != (spec.dim == 1) {
        return Err(Error::InvalidDomain("grid and domain dimensions differ".into()));
    }
    let labels = (0..grid.len())
        .map(|k| {
            let p = grid.point(k);
            if !spec.in_ball(p) {
                NodeClass::Outside
            } else if spec.contains(p) {
                NodeClass::Inner
            } else {
                NodeClass::Exterior
            }
        })
        .collect();
    let masks = DomainMasks::from_labels(*grid, labels)?;
    // every node next to the lattice edge must be outside B_R
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let edge = i == 0 || i + 1 == grid.nx || (grid.ny > 1 && (j == 0 || j + 1 == grid.ny));
            if edge && !masks.is_outside(grid.index(i, j)) {
                return Err(Error::InvalidDomain("B_R does not fit inside the grid".into()));
            }
        }
    }
    if masks.omega_measure <= spec.mu {
        return Err(Error::InsufficientExteriorVolume {
            available: masks.omega_measure,
            mu: spec.mu,
        });
    }
    Ok(masks)
}
