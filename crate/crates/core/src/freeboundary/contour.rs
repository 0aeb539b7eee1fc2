//! Marching squares on a nodal field with an explicit sign per node.

use std::collections::HashMap;

use crate::grid::Grid;

/// Polyline through edge crossings; `closed` chains repeat no point.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Chain {
    pub fn length(&self) -> f64 {
        let mut len: f64 = self.points.windows(2).map(|w| dist(w[0], w[1])).sum();
        if self.closed && self.points.len() > 2 {
            len += dist(self.points[self.points.len() - 1], self.points[0]);
        }
        len
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Edge identifier: `2 k` for the edge `k → k+1`, `2 k + 1` for `k → k+nx`.
type EdgeId = usize;

/// Zero contour of `v` (positive inside). Crossings are linear along cell edges;
/// saddle cells are split according to the sign of the cell average.
pub fn marching_squares(grid: &Grid, v: &[f64]) -> Vec<Chain> {
    marching_squares_by(grid, v, |a, b| v[a] / (v[a] - v[b]))
}

/// As [`marching_squares`], with the crossing on the edge `a → b` placed at
/// `a + t (b - a)` for `t = crossing(a, b)`.
pub fn marching_squares_by(grid: &Grid, v: &[f64], crossing: impl Fn(usize, usize) -> f64) -> Vec<Chain> {
    assert_eq!(grid.dim(), 2, "marching squares needs a 2D lattice");
    let nx = grid.nx;
    let point_on = |e: EdgeId| -> [f64; 2] {
        let a = e / 2;
        let b = if e % 2 == 0 { a + 1 } else { a + nx };
        let t = crossing(a, b);
        let (pa, pb) = (grid.point(a), grid.point(b));
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };

    let mut segments: Vec<[EdgeId; 2]> = Vec::new();
    for j in 0..grid.ny - 1 {
        for i in 0..nx - 1 {
            let k0 = grid.index(i, j);
            let (k1, k2, k3) = (k0 + 1, k0 + 1 + nx, k0 + nx);
            let inside = [v[k0] > 0.0, v[k1] > 0.0, v[k2] > 0.0, v[k3] > 0.0];
            let case = inside.iter().enumerate().fold(0, |acc, (b, &s)| acc | (usize::from(s) << b));
            if case == 0 || case == 15 {
                continue;
            }
            // bottom, right, top, left
            let edges = [2 * k0, 2 * k1 + 1, 2 * k3, 2 * k0 + 1];
            let centre_in = v[k0] + v[k1] + v[k2] + v[k3] > 0.0;
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                // corners 0 and 2 inside
                5 => {
                    if centre_in {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                // corners 1 and 3 inside
                10 => {
                    if centre_in {
                        &[(3, 0), (1, 2)]
                    } else {
                        &[(0, 1), (3, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                segments.push([edges[a], edges[b]]);
            }
        }
    }

    // every crossing edge is shared by at most two segments
    let mut by_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for e in seg {
            by_edge.entry(*e).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();
    // open chains first, starting from edges touched once
    let mut starts: Vec<usize> = (0..segments.len())
        .filter(|&s| segments[s].iter().any(|e| by_edge[e].len() == 1))
        .collect();
    starts.extend(0..segments.len());
    for s0 in starts {
        if used[s0] {
            continue;
        }
        used[s0] = true;
        let [a, b] = segments[s0];
        let (first, mut cur) = if by_edge[&a].len() == 1 { (a, b) } else { (b, a) };
        let mut edges = vec![first, cur];
        loop {
            let next = by_edge[&cur].iter().copied().find(|&s| !used[s]);
            let Some(s) = next else { break };
            used[s] = true;
            let [x, y] = segments[s];
            cur = if x == cur { y } else { x };
            edges.push(cur);
        }
        let closed = edges.len() > 2 && edges[0] == *edges.last().unwrap();
        if closed {
            edges.pop();
        }
        chains.push(Chain { points: edges.into_iter().map(point_on).collect(), closed });
    }
    chains
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_contour_is_closed_and_accurate() {
        let g = Grid::new(81, 81, 0.05, [-2.0, -2.0]).unwrap();
        let v: Vec<f64> = (0..g.len())
            .map(|k| {
                let p = g.point(k);
                1.0 - p[0].hypot(p[1])
            })
            .collect();
        let chains = marching_squares(&g, &v);
        assert_eq!(chains.len(), 1);
        assert!(chains[0].closed);
        let len = chains[0].length();
        assert!((len - 2.0 * std::f64::consts::PI).abs() < 0.01, "{len}");
    }

    #[test]
    fn half_plane_gives_one_open_chain() {
        let g = Grid::new(10, 10, 1.0, [0.0, 0.0]).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|k| 4.5 - g.point(k)[0]).collect();
        let chains = marching_squares(&g, &v);
        assert_eq!(chains.len(), 1);
        assert!(!chains[0].closed);
        assert!((chains[0].length() - 9.0).abs() < 1e-12);
        assert!(chains[0].points.iter().all(|p| (p[0] - 4.5).abs() < 1e-12));
    }

    #[test]
    fn saddle_follows_cell_average() {
        let g = Grid::new(3, 3, 1.0, [0.0, 0.0]).unwrap();
        // nodes 0 and 4 are diagonal in the lower-left cell
        let field = |pos: f64, neg: f64| {
            let mut v = vec![-1.0; 9];
            (v[0], v[4], v[1], v[3]) = (pos, pos, neg, neg);
            v
        };
        // strong corners join through the cell centre into one component
        assert_eq!(marching_squares(&g, &field(1.0, -0.1)).len(), 1);
        assert_eq!(marching_squares(&g, &field(0.1, -1.0)).len(), 2);
    }
}
