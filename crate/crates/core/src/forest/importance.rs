//! Uplift-aware feature screening.
//!
//! High-dimensional lead data carries hundreds of columns, most of which
//! never modulate the treatment effect. Before growing trees, features are
//! ranked by how much the observed uplift varies across value bins:
//!
//! `score(feature) = sum_b (n_b / n) * (uplift_b - uplift_overall)^2`
//!
//! using equal-frequency bins that never cut between equal values (so a
//! binary column gets exactly its two natural bins, and a constant column
//! collapses to one bin and scores exactly zero).

use serde::{Deserialize, Serialize};

use super::split::ArmCounts;
use super::ForestError;
use crate::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceParams {
    /// Target number of equal-frequency bins per feature.
    pub n_bins: usize,
    /// Additive smoothing used for per-bin conversion rates.
    pub smoothing: f64,
}

impl Default for ImportanceParams {
    fn default() -> Self {
        Self {
            n_bins: 10,
            smoothing: 0.5,
        }
    }
}

/// One feature's score; produced sorted by rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub score: f64,
}

/// Scores every feature and returns the ranking: descending score, ties
/// broken by name ascending.
pub fn feature_importance(
    dataset: &Dataset,
    params: ImportanceParams,
) -> Result<Vec<FeatureImportance>, ForestError> {
    if dataset.is_empty() {
        return Err(ForestError::Empty);
    }
    if dataset.rows().iter().all(|r| !r.action.is_contact()) {
        return Err(ForestError::SingleArm("treated"));
    }
    if dataset.rows().iter().all(|r| r.action.is_contact()) {
        return Err(ForestError::SingleArm("control"));
    }
    if params.n_bins < 2 {
        return Err(ForestError::InvalidParams(format!(
            "n_bins must be at least 2, got {}",
            params.n_bins
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail this check
    if !(params.smoothing > 0.0) {
        return Err(ForestError::InvalidParams(format!(
            "smoothing must be positive, got {}",
            params.smoothing
        )));
    }

    let n = dataset.len();
    let treated: Vec<bool> = dataset
        .rows()
        .iter()
        .map(|r| r.action.is_contact())
        .collect();
    let outcome: Vec<bool> = dataset.rows().iter().map(|r| r.outcome).collect();
    let mut overall = ArmCounts::default();
    for i in 0..n {
        overall.add(treated[i], outcome[i]);
    }
    let overall_uplift = overall.uplift(params.smoothing);

    let mut scores: Vec<FeatureImportance> = dataset
        .schema()
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let column = dataset.feature_column(j);
            let mut order: Vec<usize> = (0..n).collect();
            // Ties sort by row position, keeping the binning deterministic.
            order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));

            // Equal-frequency bins of ~n / n_bins rows, extended past ties so
            // equal values never straddle a bin edge.
            let target = n.div_ceil(params.n_bins).max(1);
            let mut score = 0.0;
            let mut start = 0usize;
            while start < n {
                let mut end = (start + target).min(n);
                while end < n && column[order[end]] == column[order[end - 1]] {
                    end += 1;
                }
                let mut bin = ArmCounts::default();
                for &i in &order[start..end] {
                    bin.add(treated[i], outcome[i]);
                }
                let diff = bin.uplift(params.smoothing) - overall_uplift;
                score += (end - start) as f64 / n as f64 * diff * diff;
                start = end;
            }
            FeatureImportance {
                name: name.clone(),
                score,
            }
        })
        .collect();

    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(scores)
}

/// Keeps the top `k` ranked names (all of them when fewer exist).
pub fn select_top_k(ranking: &[FeatureImportance], k: usize) -> Vec<String> {
    ranking.iter().take(k).map(|fi| fi.name.clone()).collect()
}
