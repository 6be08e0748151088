//! Spherical gradient refinement of one hypothesis.

use nalgebra::Vector3;
use rand::Rng;

use crate::scene::DepthRange;

use super::hypothesis::Hypothesis;

/// Descent rounds over the normal angles.
pub const NORMAL_ROUNDS: usize = 3;
/// Random depth perturbations tried after the normal descent.
pub const DEPTH_SAMPLES: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct RefineParams {
    /// Initial angular step in radians.
    pub step: f64,
    /// Relative depth interval half-width, μ(n).
    pub mu: f64,
}

/// Searching interval `[d(1-μ), d(1+μ)]` clipped to the scene range.
pub fn depth_interval(depth: f64, mu: f64, range: &DepthRange) -> (f64, f64) {
    ((depth * (1.0 - mu)).max(range.min), (depth * (1.0 + mu)).min(range.max))
}

/// Refines `(hyp, cost)` under `eval(h, limit)`, which returns the aggregated
/// cost of `h` or, when that cost is at least `limit`, any value `>= limit`.
/// The two gradient probes of a round ask for exact costs (`limit = ∞`).
///
/// Each round probes `θ + Δ` and `φ + Δ`, forms the forward-difference
/// gradient and steps `Δ` against it; the cheapest of the three wins if it
/// strictly improves, otherwise `Δ` halves. Then depths are drawn from the
/// searching interval with the best normal. Only strictly cheaper candidates
/// are accepted, so the result is never worse than the input.
pub fn spherical_gradient_refine<R: Rng>(
    hyp: Hypothesis,
    cost: f64,
    ray: &Vector3<f64>,
    range: &DepthRange,
    params: &RefineParams,
    rng: &mut R,
    mut eval: impl FnMut(&Hypothesis, f64) -> f64,
) -> (Hypothesis, f64) {
    let (mut best, mut best_cost) = (hyp, cost);
    let mut step = params.step;
    for _ in 0..NORMAL_ROUNDS {
        let at = best;
        let (theta, phi) = at.angles();
        let mut round_best = (at, best_cost);
        let mut probe = |t: f64, p: f64, exact: bool, round_best: &mut (Hypothesis, f64)| -> Option<f64> {
            let cand = Hypothesis::new(at.depth, Hypothesis::normal_from_angles(t, p));
            if !cand.is_valid(range, ray) {
                return None;
            }
            let c = eval(&cand, if exact { f64::INFINITY } else { round_best.1 });
            if c < round_best.1 {
                *round_best = (cand, c);
            }
            Some(c)
        };
        let dt = probe(theta + step, phi, true, &mut round_best).map_or(0.0, |c| c - best_cost);
        let dp = probe(theta, phi + step, true, &mut round_best).map_or(0.0, |c| c - best_cost);
        let norm = dt.hypot(dp);
        if norm > 0.0 && norm.is_finite() {
            probe(theta - step * dt / norm, phi - step * dp / norm, false, &mut round_best);
        }
        if round_best.1 < best_cost {
            (best, best_cost) = round_best;
        } else {
            step *= 0.5;
        }
    }
    let (lo, hi) = depth_interval(best.depth, params.mu, range);
    let normal = best.normal;
    for _ in 0..DEPTH_SAMPLES {
        if !(hi > lo) {
            break;
        }
        let cand = Hypothesis::new(rng.gen_range(lo..=hi), normal);
        if !cand.is_valid(range, ray) {
            continue;
        }
        let c = eval(&cand, best_cost);
        if c < best_cost {
            best = cand;
            best_cost = c;
        }
    }
    (best, best_cost)
}
