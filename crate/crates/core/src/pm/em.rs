//! Aggregation weights and their M-step.

use crate::error::{Error, Result};

/// Indices into weight and term arrays.
pub const MATCHING: usize = 0;
pub const REPROJECTION: usize = 1;
pub const COLOR: usize = 2;
pub const DEPTH: usize = 3;

/// Tolerance under which two term means count as tied.
const TIE_EPS: f64 = 1e-9;

/// Weights `(w_m, w_r, w_c, w_d)` of the aggregated cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights(pub [f64; 4]);

impl CostWeights {
    /// Normalises raw initial weights to sum 1.
    pub fn from_raw(raw: [f64; 4]) -> Result<Self> {
        let s: f64 = raw.iter().sum();
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(s > 0.0) {
            return Err(Error::Config(format!("initial weights {raw:?} must be non-negative with a positive sum")));
        }
        Ok(Self(raw.map(|w| w / s)))
    }

    pub fn as_array(&self) -> &[f64; 4] {
        &self.0
    }

    /// Weights with the listed terms switched off and the rest rescaled to
    /// sum 1, preserving their proportions.
    pub fn effective(&self, disabled: &[bool; 4]) -> [f64; 4] {
        let mut w = self.0;
        for (wk, &d) in w.iter_mut().zip(disabled) {
            if d {
                *wk = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.map(|x| x / s)
        } else {
            w
        }
    }

    pub fn satisfies(&self, eta: f64) -> bool {
        (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && self.0.iter().all(|&w| w >= eta - 1e-12)
    }
}

/// Per-term error sums over a view (associative, so it merges across threads).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermStats {
    pub sum: [f64; 4],
    pub count: [u64; 4],
}

impl TermStats {
    #[inline]
    pub fn add(&mut self, k: usize, v: f64) {
        self.sum[k] += v;
        self.count[k] += 1;
    }

    pub fn merge(mut self, other: &TermStats) -> Self {
        for k in 0..4 {
            self.sum[k] += other.sum[k];
            self.count[k] += other.count[k];
        }
        self
    }

    /// Mean per term; `None` where no pixel contributed.
    pub fn means(&self) -> [Option<f64>; 4] {
        std::array::from_fn(|k| (self.count[k] > 0).then(|| self.sum[k] / self.count[k] as f64))
    }
}

/// M-step: minimises `Σ w_k·mean_k` subject to `Σ w_k = 1` and `w_k ≥ η`.
///
/// The problem is a linear program over a shifted simplex, so the optimum puts
/// `η` on every term and the free mass `1 - 4η` on the smallest mean (split
/// evenly over ties). Terms without statistics keep `η`. With no statistics at
/// all the current weights are returned unchanged.
pub fn em_update_weights(means: &[Option<f64>; 4], current: &CostWeights, eta: f64) -> Result<CostWeights> {
    if !(eta >= 0.0) || 4.0 * eta > 1.0 + 1e-12 {
        return Err(Error::Config(format!("weight floor eta = {eta} is infeasible for four weights")));
    }
    let Some(best) = means.iter().flatten().copied().reduce(f64::min) else {
        return Ok(*current);
    };
    let ties: Vec<usize> = (0..4).filter(|&k| matches!(means[k], Some(m) if m - best <= TIE_EPS)).collect();
    let free = (1.0 - 4.0 * eta) / ties.len() as f64;
    let mut w = [eta; 4];
    for k in ties {
        w[k] += free;
    }
    Ok(CostWeights(w))
}

/// `Σ w_k·mean_k` over the terms that have statistics.
pub fn objective(w: &[f64; 4], means: &[Option<f64>; 4]) -> f64 {
    w.iter().zip(means).filter_map(|(w, m)| m.map(|m| w * m)).sum()
}
