//! Fixed-price predictor for a continuation stage.
//!
//! Since `f_ε(V) = max_{p ∈ [ε, 1/ε]} p (V - μ)`, a minimizer of `E + p V_τ` whose
//! smoothed volume equals `μ` also minimizes `E + f_ε(V_τ)`. The price is searched by
//! bracketing on `log p`; each candidate is a converged projected SOR solve in which
//! every node sees the same price, so no sweep order favours one side of the support.

use crate::energy::ramp;

use super::Problem;

/// Best candidate of a price search.
pub(super) struct PriceOutcome {
    pub u: Vec<f64>,
    /// Smoothed `J` of `u`.
    pub objective: f64,
    pub price: f64,
    pub sweeps: usize,
}

const MAX_EVALS: usize = 24;
const MAX_SWEEPS: usize = 4000;

impl Problem<'_> {
    #[inline]
    fn price_value(&self, x: f64, r: f64, n: f64, price: f64, tau: f64) -> f64 {
        self.w * (n * x * x - 2.0 * r * x) + price * self.cv * ramp(x, tau)
    }

    fn price_min(&self, r: f64, n: f64, hi: f64, price: f64, tau: f64) -> f64 {
        let top = tau.min(hi);
        let mut best = 0.0;
        let mut best_val = 0.0;
        let ramp_x = ((2.0 * self.w * r - price * self.cv / tau) / (2.0 * self.w * n)).clamp(0.0, top);
        let mut cands = [ramp_x, top, f64::NAN];
        if hi > tau {
            cands[2] = (r / n).clamp(tau, hi);
        }
        for x in cands.into_iter().filter(|x| !x.is_nan()) {
            let v = self.price_value(x, r, n, price, tau);
            if v < best_val {
                best_val = v;
                best = x;
            }
        }
        best
    }

    /// Projected SOR on `E + price · V_τ`; returns sweeps used.
    fn price_solve(&self, u: &mut [f64], order: &[usize], price: f64, tau: f64, omega: f64, tol: f64) -> usize {
        for sweep in 1..=MAX_SWEEPS {
            let mut change: f64 = 0.0;
            let mut visit = |k: usize| {
                let (r, n) = self.neighbor_sum(u, k);
                let x0 = u[k];
                let x = if self.masks.is_d(k) {
                    let target = (r / n).clamp(self.lo[k], self.hi[k]);
                    (x0 + omega * (target - x0)).clamp(self.lo[k], self.hi[k])
                } else {
                    if x0 == 0.0 && r == 0.0 {
                        return;
                    }
                    let star = self.price_min(r, n, self.hi[k], price, tau);
                    let over = (x0 + omega * (star - x0)).clamp(0.0, self.hi[k]);
                    if self.price_value(over, r, n, price, tau) <= self.price_value(x0, r, n, price, tau) {
                        over
                    } else {
                        star
                    }
                };
                change = change.max((x - x0).abs());
                u[k] = x;
            };
            if sweep % 2 == 1 {
                order.iter().for_each(|&k| visit(k));
            } else {
                order.iter().rev().for_each(|&k| visit(k));
            }
            if change <= tol {
                return sweep;
            }
        }
        MAX_SWEEPS
    }

    pub(super) fn price_search(
        &self,
        start: &[f64],
        order: &[usize],
        tau: f64,
        omega: f64,
        hint: Option<f64>,
        tol: f64,
    ) -> PriceOutcome {
        let (lo_p, hi_p) = (self.p.eps.ln(), (1.0 / self.p.eps).ln());
        let mu = self.p.mu;
        let v_tol = (0.5 * self.cv).max(2e-3 * mu);
        let mut work = start.to_vec();
        let mut best: Option<PriceOutcome> = None;
        let mut sweeps = 0;
        // bracket (log p, V - μ); the volume decreases as the price rises
        let (mut above, mut below): (Option<(f64, f64)>, Option<(f64, f64)>) = (None, None);
        let mut lp = hint.map_or(0.5 * (lo_p + hi_p), |p| p.ln()).clamp(lo_p, hi_p);
        // bracketing step in log p, doubled until the target volume is bracketed
        let mut step = if hint.is_some() { 0.05 } else { 1.0 };
        for _ in 0..MAX_EVALS {
            sweeps += self.price_solve(&mut work, order, lp.exp(), tau, omega, tol);
            let gap = self.smoothed_volume(&work, tau) - mu;
            let objective = self.smoothed_j(&work, tau);
            if best.as_ref().is_none_or(|b| objective < b.objective) {
                best = Some(PriceOutcome { u: work.clone(), objective, price: lp.exp(), sweeps: 0 });
            }
            if gap.abs() <= v_tol {
                break;
            }
            if gap > 0.0 {
                above = Some((lp, gap));
            } else {
                below = Some((lp, gap));
            }
            lp = match (above, below) {
                (Some((a, ga)), Some((b, gb))) => {
                    if (b - a).abs() < 1e-3 {
                        break;
                    }
                    // secant step kept inside the middle of the bracket
                    let t = (ga / (ga - gb)).clamp(0.1, 0.9);
                    a + t * (b - a)
                }
                (Some((a, _)), None) if a < hi_p => (a + step).min(hi_p),
                (None, Some((b, _))) if b > lo_p => (b - step).max(lo_p),
                _ => break,
            };
            step *= 2.0;
        }
        let mut out = best.expect("at least one price evaluated");
        out.sweeps = sweeps;
        out
    }
}
