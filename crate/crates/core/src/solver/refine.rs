//! Local search over the positive set with the sharp measure.
//!
//! For a fixed support `S ⊂ Ω_R` the minimizer of `E` with `u = 0` off `S` and the
//! obstacle constraints on `D` is unique, so a support has a well-defined exact
//! `J_ε`. Moves add nodes on the outer edge of `S` or remove nodes on its inner edge.
//! Cheap one-node energy estimates rank the candidates. A trial re-solves only a window
//! around the flipped nodes; the result is a feasible field for the new support, so its
//! exact `J_ε` bounds the support's optimum from above and accepting it keeps the descent
//! monotone. Accepted states are re-solved globally every few moves and before stopping.

use crate::energy::f_eps;

use super::kernel::{extent_of, psor, sor_omega};
use super::{HistoryEntry, Phase, Problem, SolveParams};

const INNER_MAX_SWEEPS: usize = 500_000;
/// Chebyshev radius, in nodes, of a 2D trial window.
const WINDOW: usize = 8;
const POLISH_EVERY: usize = 20;

pub(super) struct RefineOutcome {
    pub trials: usize,
    pub converged: bool,
}

struct Refiner<'p, 'a> {
    prob: &'p Problem<'a>,
    tol: f64,
    omega: f64,
    margin_rel: f64,
    free_d: Vec<bool>,
    /// `None` re-solves everything (1D lines are short).
    window: Option<usize>,
}

#[derive(Clone)]
struct State {
    u: Vec<f64>,
    support: Vec<bool>,
    j: f64,
    volume: f64,
}

impl Refiner<'_, '_> {
    fn positive_support(&self, u: &[f64]) -> Vec<bool> {
        let thr = self.prob.p.pos_threshold;
        let mut s = vec![false; u.len()];
        for &k in &self.prob.omega {
            s[k] = u[k] > thr;
        }
        s
    }

    /// Solves the box QP on `D ∪ S` in place and returns the exact `J_ε`.
    fn solve_on(&self, u: &mut [f64], support: &[bool]) -> f64 {
        let prob = self.prob;
        let mut free = prob.free_d.clone();
        for &k in &prob.omega {
            if support[k] {
                free.push(k);
            } else {
                u[k] = 0.0;
            }
        }
        free.sort_unstable();
        psor(&prob.grid, u, &free, &prob.lo, &prob.hi, self.omega, self.tol, INNER_MAX_SWEEPS);
        prob.exact_j(u).0
    }

    fn apply(&self, base: &State, adds: &[usize], rems: &[usize]) -> State {
        let mut u = base.u.clone();
        let mut support = base.support.clone();
        for &k in adds {
            support[k] = true;
        }
        for &k in rems {
            support[k] = false;
            u[k] = 0.0;
        }
        let j = match self.window {
            None => self.solve_on(&mut u, &support),
            Some(rad) => self.solve_window(&mut u, &support, adds.iter().chain(rems).copied(), rad),
        };
        let support = self.positive_support(&u);
        let volume = self.prob.exact_volume(&u);
        State { u, support, j, volume }
    }

    fn solve_window(&self, u: &mut [f64], support: &[bool], centers: impl Iterator<Item = usize>, rad: usize) -> f64 {
        let g = &self.prob.grid;
        let mut mark = vec![false; g.len()];
        let mut nodes = Vec::new();
        for c in centers {
            let (ci, cj) = g.ij(c);
            for j in cj.saturating_sub(rad)..(cj + rad + 1).min(g.ny) {
                for i in ci.saturating_sub(rad)..(ci + rad + 1).min(g.nx) {
                    let k = g.index(i, j);
                    if !mark[k] && (self.free_d[k] || support[k]) {
                        mark[k] = true;
                        nodes.push(k);
                    }
                }
            }
        }
        nodes.sort_unstable();
        let omega = sor_omega(g.h, extent_of(g, &nodes));
        psor(g, u, &nodes, &self.prob.lo, &self.prob.hi, omega, self.tol, INNER_MAX_SWEEPS);
        self.prob.exact_j(u).0
    }

    /// Global re-solve of the current support.
    fn polish(&self, s: &mut State) -> bool {
        let mut u = s.u.clone();
        let j = self.solve_on(&mut u, &s.support);
        if j < s.j {
            let improved = j < s.j - self.margin_rel * s.j.abs().max(1.0);
            s.support = self.positive_support(&u);
            s.volume = self.prob.exact_volume(&u);
            s.u = u;
            s.j = j;
            improved
        } else {
            false
        }
    }

    fn improves(&self, base: &State, trial: &State) -> bool {
        trial.j < base.j - self.margin_rel * base.j.abs().max(1.0)
    }

    /// Outer-edge additions and inner-edge removals with their one-node energy estimates.
    fn candidates(&self, s: &State) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
        let prob = self.prob;
        let g = &prob.grid;
        let mut adds = Vec::new();
        let mut rems = Vec::new();
        for &k in &prob.omega {
            let (r, n) = prob.neighbor_sum(&s.u, k);
            if s.support[k] {
                let mut edge = false;
                g.for_each_neighbor(k, |m| edge |= prob.masks.is_outside(m) || (prob.masks.is_omega(m) && !s.support[m]));
                if edge {
                    let x = s.u[k];
                    rems.push((k, prob.w * (2.0 * x * r - n * x * x)));
                }
            } else {
                let mut edge = false;
                g.for_each_neighbor(k, |m| edge |= s.support[m] || prob.masks.is_d(m));
                if edge {
                    let x = (r / n).min(prob.hi[k]);
                    adds.push((k, prob.w * (n * x * x - 2.0 * x * r)));
                }
            }
        }
        let by_est = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        adds.sort_by(by_est);
        rems.sort_by(by_est);
        (adds, rems)
    }

    /// `f_ε` change for `delta` more positive nodes than `s`.
    fn volume_change(&self, s: &State, delta: isize) -> f64 {
        let p = &self.prob.p;
        f_eps(s.volume + delta as f64 * self.prob.cv, p) - f_eps(s.volume, p)
    }

    /// Best estimated block move (`a` cheapest adds, `m` cheapest removals), halved
    /// until it lowers the exact `J_ε` or shrinks to nothing.
    fn batch_move(&self, s: &State, adds: &[(usize, f64)], rems: &[(usize, f64)], trials: &mut usize) -> Option<State> {
        let mut pa = vec![0.0];
        for a in adds {
            pa.push(pa.last().unwrap() + a.1);
        }
        let mut pr = vec![0.0];
        for r in rems {
            pr.push(pr.last().unwrap() + r.1);
        }
        let mut best = (0usize, 0usize, 0.0);
        for (a, ea) in pa.iter().enumerate() {
            for (m, em) in pr.iter().enumerate() {
                let est = ea + em + self.volume_change(s, a as isize - m as isize);
                if est < best.2 {
                    best = (a, m, est);
                }
            }
        }
        let (mut a, mut m) = (best.0, best.1);
        // single moves are left to the exact trials
        while a + m > 1 {
            let ids_a: Vec<usize> = adds[..a].iter().map(|x| x.0).collect();
            let ids_r: Vec<usize> = rems[..m].iter().map(|x| x.0).collect();
            let t = self.apply(s, &ids_a, &ids_r);
            *trials += 1;
            if self.improves(s, &t) {
                return Some(t);
            }
            a /= 2;
            m /= 2;
        }
        None
    }

    /// Exact scoring of single flips, swaps and double flips among the top `k` candidates.
    fn exact_move(&self, s: &State, adds: &[(usize, f64)], rems: &[(usize, f64)], k: usize, trials: &mut usize) -> Option<State> {
        let adds = &adds[..adds.len().min(k)];
        let rems = &rems[..rems.len().min(k)];
        let mut moves: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::new();
        for a in adds {
            moves.push((a.1 + self.volume_change(s, 1), vec![a.0], vec![]));
        }
        for r in rems {
            moves.push((r.1 + self.volume_change(s, -1), vec![], vec![r.0]));
        }
        for a in adds {
            for r in rems {
                moves.push((a.1 + r.1, vec![a.0], vec![r.0]));
            }
        }
        for (i, a) in adds.iter().enumerate() {
            for b in &adds[i + 1..] {
                moves.push((a.1 + b.1 + self.volume_change(s, 2), vec![a.0, b.0], vec![]));
            }
        }
        for (i, a) in rems.iter().enumerate() {
            for b in &rems[i + 1..] {
                moves.push((a.1 + b.1 + self.volume_change(s, -2), vec![], vec![a.0, b.0]));
            }
        }
        moves.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (_, ad, rm) in moves {
            let t = self.apply(s, &ad, &rm);
            *trials += 1;
            if self.improves(s, &t) {
                return Some(t);
            }
        }
        None
    }
}

pub(super) fn refine_support(
    prob: &Problem,
    u: &mut Vec<f64>,
    sp: &SolveParams,
    stage: usize,
    history: &mut Vec<HistoryEntry>,
) -> RefineOutcome {
    let mut nodes = prob.free_d.clone();
    nodes.extend_from_slice(&prob.omega);
    let mut free_d = vec![false; prob.grid.len()];
    prob.free_d.iter().for_each(|&k| free_d[k] = true);
    let r = Refiner {
        prob,
        tol: sp.inner_tolerance * prob.sup_phi,
        omega: sor_omega(prob.grid.h, extent_of(&prob.grid, &nodes)),
        margin_rel: 1e-13,
        free_d,
        window: (prob.grid.dim() == 2).then_some(WINDOW),
    };
    let k = if prob.grid.dim() == 1 { usize::MAX } else { sp.refine_trials.max(1) };

    let support = r.positive_support(u);
    let j = r.solve_on(u, &support);
    let mut state = State { support: r.positive_support(u), volume: prob.exact_volume(u), u: std::mem::take(u), j };
    history.push(prob.entry(&state.u, Phase::Refine, stage, 0, 0.0, state.j));

    let mut trials = 0;
    let mut converged = false;
    let mut since_polish = 0;
    for round in 1..=sp.max_refine_rounds {
        let (adds, rems) = r.candidates(&state);
        let next = r
            .batch_move(&state, &adds, &rems, &mut trials)
            .or_else(|| r.exact_move(&state, &adds, &rems, k, &mut trials));
        match next {
            Some(t) => {
                state = t;
                since_polish += 1;
                if r.window.is_some() && since_polish >= POLISH_EVERY {
                    r.polish(&mut state);
                    since_polish = 0;
                }
            }
            None => {
                // local windows may hide a move that pays off after a global solve
                if r.window.is_some() && since_polish > 0 && r.polish(&mut state) {
                    since_polish = 0;
                    history.push(prob.entry(&state.u, Phase::Refine, stage, round, 0.0, state.j));
                    continue;
                }
                converged = true;
                break;
            }
        }
        history.push(prob.entry(&state.u, Phase::Refine, stage, round, 0.0, state.j));
    }
    if r.window.is_some() && since_polish > 0 {
        r.polish(&mut state);
        history.push(prob.entry(&state.u, Phase::Refine, stage, sp.max_refine_rounds + 1, 0.0, state.j));
    }
    *u = state.u;
    RefineOutcome { trials, converged }
}
