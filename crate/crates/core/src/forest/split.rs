//! Divergence measures and the per-node split search.
//!
//! A split is scored by how much it increases the divergence between the
//! treatment and control outcome distributions, weighted by child size:
//!
//! `gain = sum_child (n_child / n_parent) * D(p_child || q_child) - D(p_parent || q_parent)`
//!
//! where `p` and `q` are additively smoothed conversion rates in the
//! treatment and control arms. Only strictly positive gains split a node,
//! and both children must keep `min_leaf_per_arm` rows in each arm.

use serde::{Deserialize, Serialize};

use super::TreeParams;

/// Distance between the treated-arm and control-arm outcome distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// Kullback-Leibler divergence of Bernoulli(p) from Bernoulli(q).
    Kl,
    /// Squared Euclidean distance between the two Bernoulli distributions:
    /// 2 (p - q)^2.
    Euclidean,
    /// Chi-squared divergence: (p - q)^2 / (q (1 - q)).
    ChiSquared,
}

impl Divergence {
    /// D(p || q); both arguments must lie strictly inside (0, 1), which the
    /// additive smoothing guarantees.
    pub fn value(self, p: f64, q: f64) -> f64 {
        match self {
            Divergence::Kl => p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln(),
            Divergence::Euclidean => 2.0 * (p - q) * (p - q),
            Divergence::ChiSquared => (p - q) * (p - q) / (q * (1.0 - q)),
        }
    }
}

/// Outcome counts of one node, kept per arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub n_t: u32,
    pub y_t: u32,
    pub n_c: u32,
    pub y_c: u32,
}

impl ArmCounts {
    pub fn add(&mut self, treated: bool, outcome: bool) {
        if treated {
            self.n_t += 1;
            self.y_t += u32::from(outcome);
        } else {
            self.n_c += 1;
            self.y_c += u32::from(outcome);
        }
    }

    pub fn n(&self) -> u32 {
        self.n_t + self.n_c
    }

    /// Additively smoothed conversion rate: (y + s) / (n + 2s).
    pub fn smoothed(y: u32, n: u32, s: f64) -> f64 {
        (f64::from(y) + s) / (f64::from(n) + 2.0 * s)
    }

    pub fn p_treated(&self, s: f64) -> f64 {
        Self::smoothed(self.y_t, self.n_t, s)
    }

    pub fn p_control(&self, s: f64) -> f64 {
        Self::smoothed(self.y_c, self.n_c, s)
    }

    /// The node's uplift estimate: smoothed treated rate minus smoothed
    /// control rate.
    pub fn uplift(&self, s: f64) -> f64 {
        self.p_treated(s) - self.p_control(s)
    }

    pub fn divergence(&self, d: Divergence, s: f64) -> f64 {
        d.value(self.p_treated(s), self.p_control(s))
    }

    fn minus(&self, other: &ArmCounts) -> ArmCounts {
        ArmCounts {
            n_t: self.n_t - other.n_t,
            y_t: self.y_t - other.y_t,
            n_c: self.n_c - other.n_c,
            y_c: self.y_c - other.y_c,
        }
    }

    fn satisfies_min_leaf(&self, min_per_arm: u32) -> bool {
        self.n_t >= min_per_arm && self.n_c >= min_per_arm
    }
}

/// Winning split for a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Rows route left when `x[feature] < threshold`.
    pub threshold: f64,
    pub gain: f64,
}

/// Searches the given features for the best threshold split of the node.
///
/// Candidate thresholds are midpoints between consecutive distinct values;
/// when a feature has more than `max_threshold_candidates` distinct cut
/// points the candidates are thinned to that many, spaced evenly by row
/// count. Ties in gain resolve to the lowest feature index, then the lowest
/// threshold, because iteration is ascending on both and only a strictly
/// larger gain replaces the incumbent.
pub fn best_split(
    indices: &[u32],
    columns: &[Vec<f64>],
    treated: &[bool],
    outcome: &[bool],
    features: &[usize],
    parent: ArmCounts,
    params: &TreeParams,
) -> Option<Split> {
    let parent_divergence = parent.divergence(params.divergence, params.smoothing);
    let n_parent = f64::from(parent.n());
    let min_leaf = params.min_leaf_per_arm as u32;

    let mut best: Option<Split> = None;
    let mut scratch: Vec<(f64, bool, bool)> = Vec::with_capacity(indices.len());

    for &feature in features {
        let column = &columns[feature];
        scratch.clear();
        scratch.extend(indices.iter().map(|&i| {
            let i = i as usize;
            (column[i], treated[i], outcome[i])
        }));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Boundary i means "left child takes sorted rows 0..=i"; one exists
        // wherever adjacent sorted values differ.
        let mut boundaries: Vec<usize> = Vec::new();
        for i in 0..scratch.len().saturating_sub(1) {
            if scratch[i].0 < scratch[i + 1].0 {
                boundaries.push(i);
            }
        }
        if boundaries.is_empty() {
            continue;
        }
        let chosen: Vec<usize> = if boundaries.len() <= params.max_threshold_candidates {
            boundaries
        } else {
            // Thin to evenly row-spaced cut points, deduplicated.
            let cap = params.max_threshold_candidates;
            let n = scratch.len();
            let mut picked = Vec::with_capacity(cap);
            for k in 1..=cap {
                let target = k * n / (cap + 1);
                // Boundary with left-size (i + 1) closest to target from below.
                let pos = boundaries.partition_point(|&b| b < target);
                let candidate = if pos == 0 {
                    boundaries[0]
                } else {
                    boundaries[pos - 1]
                };
                if picked.last() != Some(&candidate) {
                    picked.push(candidate);
                }
            }
            picked
        };

        let mut left = ArmCounts::default();
        let mut cursor = 0usize;
        for &boundary in &chosen {
            while cursor <= boundary {
                let (_, t, y) = scratch[cursor];
                left.add(t, y);
                cursor += 1;
            }
            let right = parent.minus(&left);
            if !left.satisfies_min_leaf(min_leaf) || !right.satisfies_min_leaf(min_leaf) {
                continue;
            }
            let gain = (f64::from(left.n()) / n_parent)
                * left.divergence(params.divergence, params.smoothing)
                + (f64::from(right.n()) / n_parent)
                    * right.divergence(params.divergence, params.smoothing)
                - parent_divergence;
            if gain <= 0.0 {
                continue;
            }
            if best.is_none_or(|b| gain > b.gain) {
                let lo = scratch[boundary].0;
                let hi = scratch[boundary + 1].0;
                let mut threshold = 0.5 * (lo + hi);
                // Midpoints of adjacent floats can round onto an endpoint;
                // routing is `x < threshold`, so nudge onto the upper value
                // to keep the realized partition identical to the sweep.
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(Split {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}
