//! Ranking and calibration diagnostics for uplift models.
//!
//! The central object is the Qini curve: rank the population by a candidate
//! score, sweep a contact budget from none to everyone, and track the
//! cumulative incremental successes the ranking would have captured at each
//! budget. A model that concentrates genuinely persuadable rows near the top
//! bows the curve upward; a useless score hugs the random chord. The
//! [`qini_coefficient`] normalizes the area under the curve against an
//! optimal reference so that 1 is perfect, 0 is random, and negative values
//! indicate anti-ranking.
//!
//! Two optimal references are supported. When ground-truth effects are
//! available (synthetic worlds), the reference ranks by the true effect.
//! On logged data the observable-optimal ordering is used instead: treated
//! successes and control failures first, then the remaining rows.
//!
//! The module also provides an equal-frequency calibration report (predicted
//! effect per bin against an inverse-propensity-weighted observed uplift) and
//! a Mann–Whitney ROC AUC for score-quality comparisons against plain
//! outcome models.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Action, Dataset};

/// Errors from diagnostic computations.
#[derive(Debug, Error)]
pub enum MetricsError {
    /// No rows were supplied.
    #[error("input is empty")]
    Empty,
    /// Score vector and row collection disagree in length.
    #[error("length mismatch: {scores} scores for {rows} rows")]
    LengthMismatch { scores: usize, rows: usize },
    /// Every row carries the same action; uplift is unidentifiable.
    #[error("both contact and no-contact rows are required")]
    SingleArm,
    /// Every label is the same class; ROC AUC is undefined.
    #[error("both positive and negative labels are required")]
    SingleClass,
    /// A score is NaN or infinite.
    #[error("score for row '{id}' is not finite")]
    NonFiniteScore { id: String },
    /// Ground-truth ranking was requested but a row lacks a true effect.
    #[error("row '{id}' has no ground-truth effect; ground-truth ranking is unavailable")]
    MissingGroundTruth { id: String },
    /// Calibration needs logged propensities on every row.
    #[error("row '{id}' has no propensity; calibration requires logged propensities")]
    MissingPropensity { id: String },
    /// The optimal reference curve has the same area as the random chord,
    /// so normalization would divide by zero.
    #[error("reference curve carries no signal (optimal area equals the random chord)")]
    DegenerateReference,
    /// Model and reference curves do not describe the same population.
    #[error("model and reference curves do not describe the same population")]
    MismatchedCurves,
    /// Requested binning cannot partition the rows sensibly.
    #[error("n_bins must satisfy 1 <= n_bins < n_rows; got {n_bins} bins for {n_rows} rows")]
    InvalidBins { n_bins: usize, n_rows: usize },
    /// CSV serialization failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of ranking input: identifier, candidate score, logged action and
/// outcome, and (when available) the generator's true effect.
#[derive(Debug, Clone, Copy)]
pub struct QiniRow<'a> {
    pub id: &'a str,
    pub score: f64,
    pub action: Action,
    pub outcome: bool,
    pub true_cate: Option<f64>,
}

impl<'a> QiniRow<'a> {
    /// Pairs a dataset with a score vector (one score per row, in row order).
    pub fn from_dataset(
        dataset: &'a Dataset,
        scores: &[f64],
    ) -> Result<Vec<QiniRow<'a>>, MetricsError> {
        if scores.len() != dataset.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                rows: dataset.len(),
            });
        }
        Ok(dataset
            .rows()
            .iter()
            .zip(scores)
            .map(|(row, &score)| QiniRow {
                id: &row.id,
                score,
                action: row.action,
                outcome: row.outcome,
                true_cate: row.true_cate,
            })
            .collect())
    }
}

/// A single point on a Qini curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QiniPoint {
    /// Fraction of the population contacted, in `[0, 1]`.
    pub fraction: f64,
    /// Cumulative incremental successes at that contact budget.
    pub incremental_successes: f64,
}

/// Cumulative incremental-success curve over a ranked population.
///
/// Always starts at the origin `(0, 0)` and ends at fraction `1`. The final
/// value depends only on the arm totals, never on the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiniCurve {
    pub points: Vec<QiniPoint>,
}

impl QiniCurve {
    /// Value at the full-population endpoint.
    pub fn endpoint(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.incremental_successes)
    }

    /// Trapezoid area under the curve over the fraction axis.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                (w[1].fraction - w[0].fraction)
                    * (w[0].incremental_successes + w[1].incremental_successes)
                    * 0.5
            })
            .sum()
    }

    /// Writes the curve as CSV with columns `fraction,incremental_successes`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), MetricsError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["fraction", "incremental_successes"])?;
        for point in &self.points {
            writer.write_record([
                format!("{}", point.fraction),
                format!("{}", point.incremental_successes),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Choice of optimal reference for Qini normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QiniReference {
    /// Rank by the generator's true effect (requires `true_cate` on every
    /// row). The natural reference on synthetic data.
    GroundTruthRanking,
    /// Observable-optimal ordering for logged data: treated successes, then
    /// control failures, then treated failures, then control successes,
    /// each block ordered by row id.
    OutcomeOptimal,
}

impl std::fmt::Display for QiniReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QiniReference::GroundTruthRanking => write!(f, "ground_truth_ranking"),
            QiniReference::OutcomeOptimal => write!(f, "outcome_optimal"),
        }
    }
}

fn validate_rows(rows: &[QiniRow<'_>]) -> Result<(), MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    for row in rows {
        if !row.score.is_finite() {
            return Err(MetricsError::NonFiniteScore {
                id: row.id.to_string(),
            });
        }
    }
    let n_treated = rows.iter().filter(|r| r.action.is_contact()).count();
    if n_treated == 0 || n_treated == rows.len() {
        return Err(MetricsError::SingleArm);
    }
    Ok(())
}

/// Prefix sweep over an explicit ordering of row indices.
fn curve_from_order(rows: &[QiniRow<'_>], order: &[usize]) -> QiniCurve {
    let n = rows.len() as f64;
    let mut points = Vec::with_capacity(order.len() + 1);
    points.push(QiniPoint {
        fraction: 0.0,
        incremental_successes: 0.0,
    });
    let (mut n_t, mut n_c, mut y_t, mut y_c) = (0u64, 0u64, 0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        let row = &rows[i];
        if row.action.is_contact() {
            n_t += 1;
            y_t += row.outcome as u64;
        } else {
            n_c += 1;
            y_c += row.outcome as u64;
        }
        // While no control rows have entered the prefix the correction term
        // is defined as zero rather than a division by zero.
        let correction = if n_c == 0 {
            0.0
        } else {
            y_c as f64 * (n_t as f64 / n_c as f64)
        };
        points.push(QiniPoint {
            fraction: (k + 1) as f64 / n,
            incremental_successes: y_t as f64 - correction,
        });
    }
    QiniCurve { points }
}

/// Computes the Qini curve for a score-based ranking.
///
/// Rows are sorted by score descending, ties broken by row id ascending so
/// the curve is a pure function of the data regardless of storage order.
pub fn qini_curve(rows: &[QiniRow<'_>]) -> Result<QiniCurve, MetricsError> {
    validate_rows(rows)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[b]
            .score
            .total_cmp(&rows[a].score)
            .then_with(|| rows[a].id.cmp(rows[b].id))
    });
    Ok(curve_from_order(rows, &order))
}

/// Computes the optimal reference curve for the requested normalization.
pub fn reference_curve(
    rows: &[QiniRow<'_>],
    reference: QiniReference,
) -> Result<QiniCurve, MetricsError> {
    validate_rows(rows)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    match reference {
        QiniReference::GroundTruthRanking => {
            for row in rows {
                if row.true_cate.is_none() {
                    return Err(MetricsError::MissingGroundTruth {
                        id: row.id.to_string(),
                    });
                }
            }
            order.sort_by(|&a, &b| {
                let ta = rows[a].true_cate.unwrap();
                let tb = rows[b].true_cate.unwrap();
                tb.total_cmp(&ta).then_with(|| rows[a].id.cmp(rows[b].id))
            });
        }
        QiniReference::OutcomeOptimal => {
            let block = |row: &QiniRow<'_>| match (row.action.is_contact(), row.outcome) {
                (true, true) => 0u8,
                (false, false) => 1,
                (true, false) => 2,
                (false, true) => 3,
            };
            order.sort_by(|&a, &b| {
                block(&rows[a])
                    .cmp(&block(&rows[b]))
                    .then_with(|| rows[a].id.cmp(rows[b].id))
            });
        }
    }
    Ok(curve_from_order(rows, &order))
}

/// Normalized Qini coefficient: `(A_model − A_random) / (A_optimal − A_random)`,
/// areas by trapezoid over the fraction axis, with `A_random` the straight
/// chord from the origin to the shared full-population endpoint.
///
/// Both curves must describe the same population (same endpoint). A reference
/// whose area coincides with the chord carries no signal and is rejected.
pub fn qini_coefficient(model: &QiniCurve, optimal: &QiniCurve) -> Result<f64, MetricsError> {
    let (m_last, o_last) = match (model.points.last(), optimal.points.last()) {
        (Some(m), Some(o)) => (m, o),
        _ => return Err(MetricsError::Empty),
    };
    if m_last.fraction != 1.0
        || o_last.fraction != 1.0
        || m_last.incremental_successes != o_last.incremental_successes
    {
        return Err(MetricsError::MismatchedCurves);
    }
    let a_random = m_last.incremental_successes * 0.5;
    let a_model = model.area();
    let a_optimal = optimal.area();
    if a_optimal - a_random == 0.0 {
        return Err(MetricsError::DegenerateReference);
    }
    Ok((a_model - a_random) / (a_optimal - a_random))
}

/// One equal-frequency calibration bin.
///
/// `observed_uplift` and `ci_halfwidth` are absent when the bin lacks one of
/// the two arms after weighting; such bins are flagged via `single_arm`
/// rather than silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    /// Mean predicted effect of the rows in the bin.
    pub mean_predicted: f64,
    /// Inverse-propensity-weighted observed uplift in the bin.
    pub observed_uplift: Option<f64>,
    /// Number of rows assigned to the bin.
    pub n_rows: usize,
    /// Normal-approximation 95% half-width for `observed_uplift`.
    pub ci_halfwidth: Option<f64>,
    /// True when the bin contains only one arm.
    pub single_arm: bool,
}

/// Equal-frequency calibration report: predictions are sorted, partitioned
/// into bins whose sizes differ by at most one, and each bin compares the
/// mean prediction against a weighted observed uplift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationReport {
    /// Writes the report as CSV, one row per bin. Missing uplift values are
    /// left empty.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), MetricsError> {
        let mut file = std::fs::File::create(path)?;
        writeln!(
            file,
            "bin,mean_predicted,observed_uplift,n_rows,ci_halfwidth,single_arm"
        )?;
        for (i, bin) in self.bins.iter().enumerate() {
            let uplift = bin
                .observed_uplift
                .map_or(String::new(), |v| format!("{v}"));
            let hw = bin.ci_halfwidth.map_or(String::new(), |v| format!("{v}"));
            writeln!(
                file,
                "{},{},{},{},{},{}",
                i, bin.mean_predicted, uplift, bin.n_rows, hw, bin.single_arm
            )?;
        }
        Ok(())
    }
}

/// Normal quantile for the 95% interval used by the calibration report.
const CALIBRATION_Z: f64 = 1.959963984540054;

/// Bins rows by predicted effect and compares each bin's mean prediction to
/// the inverse-propensity-weighted observed uplift.
///
/// Bins are equal-frequency over `(prediction, id)` order; sizes differ by
/// at most one and partition the dataset exactly. Every row must carry a
/// logged propensity. `n_bins` must be at least 1 and strictly less than the
/// number of rows (size-one bins can never contain both arms).
pub fn calibration(
    predictions: &[f64],
    dataset: &Dataset,
    n_bins: usize,
) -> Result<CalibrationReport, MetricsError> {
    let n = dataset.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if predictions.len() != n {
        return Err(MetricsError::LengthMismatch {
            scores: predictions.len(),
            rows: n,
        });
    }
    if n_bins == 0 || n_bins >= n {
        return Err(MetricsError::InvalidBins { n_bins, n_rows: n });
    }
    let rows = dataset.rows();
    for (row, &pred) in rows.iter().zip(predictions) {
        if !pred.is_finite() {
            return Err(MetricsError::NonFiniteScore { id: row.id.clone() });
        }
        if row.propensity.is_none() {
            return Err(MetricsError::MissingPropensity { id: row.id.clone() });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        predictions[a]
            .total_cmp(&predictions[b])
            .then_with(|| rows[a].id.cmp(&rows[b].id))
    });

    let base = n / n_bins;
    let remainder = n % n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0usize;
    for b in 0..n_bins {
        let size = base + usize::from(b < remainder);
        let members = &order[start..start + size];
        start += size;

        let mean_predicted = members.iter().map(|&i| predictions[i]).sum::<f64>() / size as f64;

        // Hajek-weighted arm means with linearized variances. Weights are
        // 1/e for contacted rows and 1/(1-e) otherwise.
        let (mut sw_t, mut swy_t, mut sw2_t, mut sw2y_t) = (0.0, 0.0, 0.0, 0.0);
        let (mut sw_c, mut swy_c, mut sw2_c, mut sw2y_c) = (0.0, 0.0, 0.0, 0.0);
        for &i in members {
            let row = &rows[i];
            let e = row.propensity.expect("propensity checked above");
            let y = row.outcome as u8 as f64;
            if row.action.is_contact() {
                let w = 1.0 / e;
                sw_t += w;
                swy_t += w * y;
                sw2_t += w * w;
                sw2y_t += w * w * y;
            } else {
                let w = 1.0 / (1.0 - e);
                sw_c += w;
                swy_c += w * y;
                sw2_c += w * w;
                sw2y_c += w * w * y;
            }
        }
        if sw_t == 0.0 || sw_c == 0.0 {
            bins.push(CalibrationBin {
                mean_predicted,
                observed_uplift: None,
                n_rows: size,
                ci_halfwidth: None,
                single_arm: true,
            });
            continue;
        }
        let mu_t = swy_t / sw_t;
        let mu_c = swy_c / sw_c;
        // For binary y, sum w_i^2 (y_i - mu)^2 expands to
        // sum(w^2 y)(1 - 2 mu) + mu^2 sum(w^2).
        let var_t = ((sw2y_t * (1.0 - 2.0 * mu_t) + mu_t * mu_t * sw2_t) / (sw_t * sw_t)).max(0.0);
        let var_c = ((sw2y_c * (1.0 - 2.0 * mu_c) + mu_c * mu_c * sw2_c) / (sw_c * sw_c)).max(0.0);
        bins.push(CalibrationBin {
            mean_predicted,
            observed_uplift: Some(mu_t - mu_c),
            n_rows: size,
            ci_halfwidth: Some(CALIBRATION_Z * (var_t + var_c).sqrt()),
            single_arm: false,
        });
    }
    Ok(CalibrationReport { bins })
}

/// Mann–Whitney ROC AUC: the probability that a uniformly random positive
/// row outscores a uniformly random negative row, ties counted as one half.
///
/// Computed from an exact integer pair count, so `roc_auc(s, y)` and
/// `roc_auc(-s, y)` always sum to exactly 1.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            rows: labels.len(),
        });
    }
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore { id: i.to_string() });
        }
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sweep ascending, counting for each tie group: twice a win for every
    // negative strictly below, plus one (a half, doubled) for every negative
    // inside the group.
    let mut twice_u = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos_in = group.iter().filter(|&&k| labels[k]).count() as u64;
        let neg_in = group.len() as u64 - pos_in;
        twice_u += pos_in * (2 * neg_below + neg_in);
        neg_below += neg_in;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn row(id: &str, score: f64, contact: bool, outcome: bool) -> QiniRow<'_> {
        QiniRow {
            id,
            score,
            action: if contact {
                Action::Contact
            } else {
                Action::NoContact
            },
            outcome,
            true_cate: None,
        }
    }

    /// The worked four-row example: Q values [1, 1, 1, 0] at quarter
    /// fractions, preceded by the origin.
    #[test]
    fn four_row_curve_matches_hand_evaluation() {
        let rows = vec![
            row("a", 0.9, true, true),
            row("b", 0.5, false, false),
            row("c", 0.1, true, false),
            row("d", -0.2, false, true),
        ];
        let curve = qini_curve(&rows).unwrap();
        let expected = [(0.0, 0.0), (0.25, 1.0), (0.5, 1.0), (0.75, 1.0), (1.0, 0.0)];
        assert_eq!(curve.points.len(), expected.len());
        for (point, (f, q)) in curve.points.iter().zip(expected) {
            assert_eq!(point.fraction, f);
            assert_eq!(point.incremental_successes, q);
        }
    }

    /// The endpoint depends only on arm totals, never on the scores.
    #[test]
    fn endpoint_is_score_independent() {
        let mut rng = seed::rng(seed::derive(42, "qini-endpoint"));
        let ids: Vec<String> = (0..200).map(|i| format!("r{i:03}")).collect();
        let data: Vec<(bool, bool)> = (0..200)
            .map(|_| (rng.random::<f64>() < 0.5, rng.random::<f64>() < 0.3))
            .collect();
        let build = |scores: &[f64]| -> Vec<QiniRow<'_>> {
            ids.iter()
                .zip(&data)
                .zip(scores)
                .map(|((id, &(contact, outcome)), &score)| QiniRow {
                    id,
                    score,
                    action: if contact {
                        Action::Contact
                    } else {
                        Action::NoContact
                    },
                    outcome,
                    true_cate: None,
                })
                .collect()
        };
        let scores_a: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let scores_b: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let end_a = qini_curve(&build(&scores_a)).unwrap().endpoint();
        let end_b = qini_curve(&build(&scores_b)).unwrap().endpoint();
        assert_eq!(end_a.to_bits(), end_b.to_bits());
    }

    /// Storage order is irrelevant when scores are distinct.
    #[test]
    fn curve_is_invariant_to_row_permutation() {
        let rows = vec![
            row("a", 0.9, true, true),
            row("b", 0.5, false, false),
            row("c", 0.1, true, false),
            row("d", -0.2, false, true),
            row("e", 0.7, true, true),
            row("f", 0.3, false, true),
        ];
        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        assert_eq!(qini_curve(&rows).unwrap(), qini_curve(&shuffled).unwrap());
    }

    #[test]
    fn single_arm_input_is_rejected() {
        let rows = vec![row("a", 0.9, true, true), row("b", 0.5, true, false)];
        assert!(matches!(qini_curve(&rows), Err(MetricsError::SingleArm)));
    }

    #[test]
    fn nan_score_is_rejected_with_the_row_id() {
        let rows = vec![row("a", f64::NAN, true, true), row("b", 0.5, false, false)];
        match qini_curve(&rows) {
            Err(MetricsError::NonFiniteScore { id }) => assert_eq!(id, "a"),
            other => panic!("expected NonFiniteScore, got {other:?}"),
        }
    }

    /// Synthetic rows with a continuous effect: scoring by the true effect
    /// itself must normalize to 1 against the ground-truth reference, a
    /// random score to about 0, and the negated effect below 0.
    #[test]
    fn coefficient_anchors_at_one_zero_and_negative() {
        let mut rng = seed::rng(seed::derive(42, "qini-coef"));
        let n = 50_000;
        let ids: Vec<String> = (0..n).map(|i| format!("r{i:05}")).collect();
        let mut rows_data = Vec::with_capacity(n);
        for _ in 0..n {
            let tau: f64 = rng.random_range(-0.1..0.2);
            let contact = rng.random::<f64>() < 0.5;
            let p = (0.35 + if contact { tau } else { 0.0 }).clamp(0.0, 1.0);
            let outcome = rng.random::<f64>() < p;
            rows_data.push((tau, contact, outcome));
        }
        let build = |scores: &[f64]| -> Vec<QiniRow<'_>> {
            ids.iter()
                .zip(&rows_data)
                .zip(scores)
                .map(|((id, &(tau, contact, outcome)), &score)| QiniRow {
                    id,
                    score,
                    action: if contact {
                        Action::Contact
                    } else {
                        Action::NoContact
                    },
                    outcome,
                    true_cate: Some(tau),
                })
                .collect()
        };

        let true_scores: Vec<f64> = rows_data.iter().map(|&(tau, _, _)| tau).collect();
        let rows = build(&true_scores);
        let optimal = reference_curve(&rows, QiniReference::GroundTruthRanking).unwrap();

        let c_true = qini_coefficient(&qini_curve(&rows).unwrap(), &optimal).unwrap();
        assert!(
            (c_true - 1.0).abs() <= 0.05,
            "true-score coefficient {c_true}"
        );

        let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c_noise = qini_coefficient(&qini_curve(&build(&noise)).unwrap(), &optimal).unwrap();
        assert!(c_noise.abs() <= 0.05, "noise coefficient {c_noise}");

        let anti: Vec<f64> = true_scores.iter().map(|t| -t).collect();
        let c_anti = qini_coefficient(&qini_curve(&build(&anti)).unwrap(), &optimal).unwrap();
        assert!(c_anti < 0.0, "anti-ranking coefficient {c_anti}");
    }

    /// Any strictly increasing transform of the scores leaves the ranking,
    /// hence the curve and the coefficient, bitwise unchanged.
    #[test]
    fn coefficient_is_a_rank_statistic() {
        let mut rng = seed::rng(seed::derive(42, "qini-rank"));
        let ids: Vec<String> = (0..500).map(|i| format!("r{i:03}")).collect();
        let data: Vec<(f64, bool, bool)> = (0..500)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random::<f64>() < 0.5,
                    rng.random::<f64>() < 0.4,
                )
            })
            .collect();
        let build = |transform: &dyn Fn(f64) -> f64| -> Vec<QiniRow<'_>> {
            ids.iter()
                .zip(&data)
                .map(|(id, &(score, contact, outcome))| QiniRow {
                    id,
                    score: transform(score),
                    action: if contact {
                        Action::Contact
                    } else {
                        Action::NoContact
                    },
                    outcome,
                    true_cate: None,
                })
                .collect()
        };
        let raw = build(&|s| s);
        let warped = build(&|s| (3.0 * s).exp() + 7.0);
        let reference = reference_curve(&raw, QiniReference::OutcomeOptimal).unwrap();
        let c_raw = qini_coefficient(&qini_curve(&raw).unwrap(), &reference).unwrap();
        let c_warped = qini_coefficient(&qini_curve(&warped).unwrap(), &reference).unwrap();
        assert_eq!(c_raw.to_bits(), c_warped.to_bits());
    }

    /// Scoring in exactly the observable-optimal order makes the model curve
    /// coincide with the reference, so the coefficient is exactly 1.
    #[test]
    fn outcome_optimal_ordering_normalizes_to_one() {
        let rows = vec![
            row("a", 4.0, true, true),   // treated success
            row("b", 3.0, false, false), // control failure
            row("c", 2.0, true, false),  // treated failure
            row("d", 1.0, false, true),  // control success
        ];
        let reference = reference_curve(&rows, QiniReference::OutcomeOptimal).unwrap();
        let expected: Vec<f64> = vec![0.0, 1.0, 1.0, 1.0, 0.0];
        for (point, q) in reference.points.iter().zip(&expected) {
            assert_eq!(point.incremental_successes, *q);
        }
        let coefficient = qini_coefficient(&qini_curve(&rows).unwrap(), &reference).unwrap();
        assert_eq!(coefficient, 1.0);
    }

    /// All-failure outcomes give a flat optimal curve equal to the chord:
    /// normalization is undefined and must be reported as such.
    #[test]
    fn degenerate_reference_is_rejected() {
        let rows = vec![
            row("a", 0.9, true, false),
            row("b", 0.5, false, false),
            row("c", 0.1, true, false),
            row("d", -0.2, false, false),
        ];
        let reference = reference_curve(&rows, QiniReference::OutcomeOptimal).unwrap();
        assert!(matches!(
            qini_coefficient(&qini_curve(&rows).unwrap(), &reference),
            Err(MetricsError::DegenerateReference)
        ));
    }

    #[test]
    fn ground_truth_reference_requires_true_effects() {
        let rows = vec![row("a", 0.9, true, true), row("b", 0.5, false, false)];
        assert!(matches!(
            reference_curve(&rows, QiniReference::GroundTruthRanking),
            Err(MetricsError::MissingGroundTruth { .. })
        ));
    }

    fn calibration_dataset(specs: &[(f64, bool, bool, f64)]) -> (Vec<f64>, crate::data::Dataset) {
        use crate::data::{Dataset, FeatureSchema, ObservationRow};
        let schema = FeatureSchema::new(vec!["n_x".to_string()]).unwrap();
        let mut rows = Vec::new();
        let mut predictions = Vec::new();
        for (i, &(pred, contact, outcome, e)) in specs.iter().enumerate() {
            predictions.push(pred);
            rows.push(ObservationRow {
                id: format!("r{i:03}"),
                day_index: 1,
                features: vec![0.0],
                action: if contact {
                    Action::Contact
                } else {
                    Action::NoContact
                },
                outcome,
                propensity: Some(e),
                true_cate: None,
                potential_outcomes: None,
            });
        }
        (predictions, Dataset::new(schema, rows, 90).unwrap())
    }

    /// Under a constant propensity of one half the weighted uplift reduces
    /// to the plain treated-minus-control rate difference.
    #[test]
    fn constant_propensity_reduces_to_raw_difference() {
        let (predictions, dataset) = calibration_dataset(&[
            (0.1, true, true, 0.5),
            (0.1, true, false, 0.5),
            (0.1, false, false, 0.5),
            (0.1, false, false, 0.5),
        ]);
        let report = calibration(&predictions, &dataset, 1).unwrap();
        assert_eq!(report.bins.len(), 1);
        let bin = &report.bins[0];
        assert_eq!(bin.observed_uplift, Some(0.5));
        assert_eq!(bin.n_rows, 4);
        assert!(!bin.single_arm);
        assert!(bin.ci_halfwidth.unwrap() > 0.0);
    }

    /// Bin sizes partition the rows exactly, differ by at most one, and come
    /// out ordered by predicted effect.
    #[test]
    fn bins_partition_exactly() {
        let mut rng = seed::rng(seed::derive(42, "calibration-bins"));
        let specs: Vec<(f64, bool, bool, f64)> = (0..23)
            .map(|_| {
                (
                    rng.random_range(-0.2..0.2),
                    rng.random::<f64>() < 0.5,
                    rng.random::<f64>() < 0.4,
                    0.5,
                )
            })
            .collect();
        let (predictions, dataset) = calibration_dataset(&specs);
        let report = calibration(&predictions, &dataset, 10).unwrap();
        assert_eq!(report.bins.len(), 10);
        let sizes: Vec<usize> = report.bins.iter().map(|b| b.n_rows).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1);
        for pair in report.bins.windows(2) {
            assert!(pair[0].mean_predicted <= pair[1].mean_predicted);
        }
    }

    /// Constant predictions still produce a full report whose bins scatter
    /// around the global estimate.
    #[test]
    fn constant_predictions_share_the_bin_mean() {
        let mut rng = seed::rng(seed::derive(42, "calibration-const"));
        let specs: Vec<(f64, bool, bool, f64)> = (0..200)
            .map(|_| {
                (
                    0.07,
                    rng.random::<f64>() < 0.5,
                    rng.random::<f64>() < 0.4,
                    0.5,
                )
            })
            .collect();
        let (predictions, dataset) = calibration_dataset(&specs);
        let report = calibration(&predictions, &dataset, 5).unwrap();
        for bin in &report.bins {
            // Summation order costs at most an ulp or two on the mean.
            assert!((bin.mean_predicted - 0.07).abs() < 1e-12);
            assert!(bin.observed_uplift.is_some());
        }
    }

    /// A bin holding only one arm is flagged in place, never dropped.
    #[test]
    fn single_arm_bins_are_flagged_not_dropped() {
        // Treated rows all score high, control rows all score low, so each
        // of the two bins sees a single arm.
        let (predictions, dataset) = calibration_dataset(&[
            (0.9, true, true, 0.5),
            (0.9, true, false, 0.5),
            (0.1, false, false, 0.5),
            (0.1, false, true, 0.5),
        ]);
        let report = calibration(&predictions, &dataset, 2).unwrap();
        assert_eq!(report.bins.len(), 2);
        for bin in &report.bins {
            assert!(bin.single_arm);
            assert_eq!(bin.observed_uplift, None);
            assert_eq!(bin.ci_halfwidth, None);
        }
    }

    #[test]
    fn size_one_bins_are_rejected() {
        let (predictions, dataset) = calibration_dataset(&[
            (0.1, true, true, 0.5),
            (0.2, false, false, 0.5),
            (0.3, true, false, 0.5),
        ]);
        assert!(matches!(
            calibration(&predictions, &dataset, 3),
            Err(MetricsError::InvalidBins {
                n_bins: 3,
                n_rows: 3
            })
        ));
        assert!(matches!(
            calibration(&predictions, &dataset, 0),
            Err(MetricsError::InvalidBins { .. })
        ));
    }

    #[test]
    fn calibration_requires_propensities() {
        use crate::data::{Dataset, FeatureSchema, ObservationRow};
        let schema = FeatureSchema::new(vec!["n_x".to_string()]).unwrap();
        let rows = vec![
            ObservationRow {
                id: "a".to_string(),
                day_index: 1,
                features: vec![0.0],
                action: Action::Contact,
                outcome: true,
                propensity: None,
                true_cate: None,
                potential_outcomes: None,
            },
            ObservationRow {
                id: "b".to_string(),
                day_index: 1,
                features: vec![0.0],
                action: Action::NoContact,
                outcome: false,
                propensity: Some(0.5),
                true_cate: None,
                potential_outcomes: None,
            },
        ];
        let dataset = Dataset::new(schema, rows, 90).unwrap();
        assert!(matches!(
            calibration(&[0.1, 0.2], &dataset, 1),
            Err(MetricsError::MissingPropensity { id }) if id == "a"
        ));
    }

    /// Worked AUC example: one discordant pair out of four.
    #[test]
    fn auc_matches_hand_counted_pairs() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn auc_extremes() {
        let perfect = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(perfect, 1.0);
        let ties = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true]).unwrap();
        assert_eq!(ties, 0.5);
    }

    #[test]
    fn auc_rejects_single_class_and_nan() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass)
        ));
        assert!(matches!(
            roc_auc(&[f64::NAN, 0.2], &[true, false]),
            Err(MetricsError::NonFiniteScore { .. })
        ));
    }

    /// Negating the scores flips every pair, so the two AUCs sum to exactly
    /// one — including under heavy ties.
    #[test]
    fn auc_forward_plus_reverse_is_exactly_one() {
        let mut rng = seed::rng(seed::derive(42, "auc-flip"));
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(rng.random_range(0..8)) / 4.0)
                .collect();
            let labels: Vec<bool> = loop {
                let candidate: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
                if candidate.iter().any(|&l| l) && candidate.iter().any(|&l| !l) {
                    break candidate;
                }
            };
            let forward = roc_auc(&scores, &labels).unwrap();
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let reverse = roc_auc(&negated, &labels).unwrap();
            assert_eq!(forward + reverse, 1.0, "n={n} fwd={forward} rev={reverse}");
        }
    }

    #[test]
    fn from_dataset_checks_lengths() {
        let (_, dataset) = calibration_dataset(&[(0.1, true, true, 0.5), (0.2, false, false, 0.5)]);
        assert!(matches!(
            QiniRow::from_dataset(&dataset, &[0.1]),
            Err(MetricsError::LengthMismatch { scores: 1, rows: 2 })
        ));
        let rows = QiniRow::from_dataset(&dataset, &[0.1, 0.2]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].id, "r000");
    }

    /// Curves round-trip through the CSV writer with full precision headers.
    #[test]
    fn curve_csv_has_expected_shape() {
        let dir = std::env::temp_dir().join(format!("qini-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.csv");
        let rows = vec![
            row("a", 0.9, true, true),
            row("b", 0.5, false, false),
            row("c", 0.1, true, false),
            row("d", -0.2, false, true),
        ];
        qini_curve(&rows).unwrap().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("fraction,incremental_successes"));
        assert_eq!(lines.count(), 5);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
