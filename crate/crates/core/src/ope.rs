//! Off-policy evaluation of deterministic contact policies on logged data.
//!
//! The estimator is self-normalized importance sampling (SNIPS): each logged
//! row is weighted by `1 / e` when the candidate policy agrees with a logged
//! contact, by `1 / (1 - e)` when it agrees with a logged no-contact, and by
//! zero otherwise, where `e` is the logged propensity of contact. The policy
//! value is the weighted mean outcome. Self-normalization keeps the estimate
//! inside the observed outcome range for any weighting, at the cost of a
//! small finite-sample bias.
//!
//! Confidence intervals come from a seeded percentile bootstrap over row
//! resamples. Resamples in which the policy matches no rows carry no
//! information and are skipped (and counted); if more than half of the
//! resamples degenerate this way, overlap is too poor to report an interval
//! at all.
//!
//! [`ope_curve`] sweeps a contact budget from nobody to everybody, ranking
//! rows by a score, and evaluates the induced policy at each budget — both
//! for the supplied ranking and for a seeded random permutation of it, so a
//! plot can show the ranking's added value over blind targeting at the same
//! contact rate.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Action, Dataset};
use crate::seed;

/// Errors from off-policy evaluation.
#[derive(Debug, Error)]
pub enum OpeError {
    /// No rows were supplied.
    #[error("input is empty")]
    Empty,
    /// Policy action vector and dataset disagree in length.
    #[error("length mismatch: {actions} policy actions for {rows} rows")]
    LengthMismatch { actions: usize, rows: usize },
    /// A row lacks a logged propensity.
    #[error("row '{id}' has no propensity; off-policy evaluation requires logged propensities")]
    MissingPropensity { id: String },
    /// The policy matches no logged action, so every weight is zero.
    #[error("policy matches no logged action; the estimate is undefined (no overlap)")]
    NoOverlap,
    /// Too many bootstrap resamples carried zero total weight.
    #[error(
        "{n_degenerate} of {n_reps} bootstrap resamples had zero total weight; \
         overlap is too poor for a confidence interval"
    )]
    TooManyDegenerate { n_degenerate: usize, n_reps: usize },
    /// Confidence level must lie strictly between 0 and 1.
    #[error("confidence level must be in (0, 1); got {level}")]
    InvalidLevel { level: f64 },
    /// At least one bootstrap replicate is required.
    #[error("n_reps must be at least 1")]
    InvalidReps,
    /// The contact-fraction grid needs at least one step.
    #[error("n_grid must be at least 1")]
    InvalidGrid,
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A SNIPS estimate of a policy's expected outcome rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpeEstimate {
    /// Expected outcome rate under the policy.
    pub value: f64,
    /// Lower bootstrap confidence bound (equals `value` when no bootstrap
    /// was run).
    pub ci_low: f64,
    /// Upper bootstrap confidence bound.
    pub ci_high: f64,
    /// Kish effective sample size `(Σw)² / Σw²` of the matched rows.
    pub effective_sample_size: f64,
    /// Number of rows where the policy agrees with the logged action.
    pub n_matched: usize,
}

/// Bootstrap parameters: replicate count, confidence level, and master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub n_reps: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapParams {
    /// Default bootstrap: 1000 replicates at the 95% level.
    pub fn new(seed: u64) -> Self {
        BootstrapParams {
            n_reps: 1000,
            level: 0.95,
            seed,
        }
    }

    fn validate(&self) -> Result<(), OpeError> {
        if self.n_reps == 0 {
            return Err(OpeError::InvalidReps);
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(OpeError::InvalidLevel { level: self.level });
        }
        Ok(())
    }
}

/// A percentile bootstrap interval together with the number of resamples
/// that had to be skipped for lack of overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_degenerate: usize,
}

/// Computes per-row importance weights and outcomes for a deterministic
/// policy: `1{policy = logged} / (e or 1-e)`.
fn weights_and_outcomes(
    dataset: &Dataset,
    policy_actions: &[Action],
) -> Result<(Vec<f64>, Vec<f64>), OpeError> {
    let rows = dataset.rows();
    if rows.is_empty() {
        return Err(OpeError::Empty);
    }
    if policy_actions.len() != rows.len() {
        return Err(OpeError::LengthMismatch {
            actions: policy_actions.len(),
            rows: rows.len(),
        });
    }
    let mut weights = Vec::with_capacity(rows.len());
    let mut outcomes = Vec::with_capacity(rows.len());
    for (row, &pi) in rows.iter().zip(policy_actions) {
        let e = row
            .propensity
            .ok_or_else(|| OpeError::MissingPropensity { id: row.id.clone() })?;
        let w = if pi == row.action {
            if row.action.is_contact() {
                1.0 / e
            } else {
                1.0 / (1.0 - e)
            }
        } else {
            0.0
        };
        weights.push(w);
        outcomes.push(row.outcome as u8 as f64);
    }
    Ok((weights, outcomes))
}

/// Self-normalized weighted mean over raw weight/outcome pairs.
///
/// Exposed separately so the estimator's algebraic properties (boundedness,
/// weight-scale invariance) can be exercised directly.
pub fn snips_from_weights(weights: &[f64], outcomes: &[bool]) -> Result<f64, OpeError> {
    if weights.is_empty() {
        return Err(OpeError::Empty);
    }
    if weights.len() != outcomes.len() {
        return Err(OpeError::LengthMismatch {
            actions: weights.len(),
            rows: outcomes.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&w, &y) in weights.iter().zip(outcomes) {
        num += w * (y as u8 as f64);
        den += w;
    }
    if den == 0.0 {
        return Err(OpeError::NoOverlap);
    }
    Ok(num / den)
}

fn point_estimate(weights: &[f64], outcomes: &[f64]) -> Result<(f64, f64, usize), OpeError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut den_sq = 0.0;
    let mut n_matched = 0usize;
    for (&w, &y) in weights.iter().zip(outcomes) {
        num += w * y;
        den += w;
        den_sq += w * w;
        n_matched += usize::from(w > 0.0);
    }
    if den == 0.0 {
        return Err(OpeError::NoOverlap);
    }
    Ok((num / den, den * den / den_sq, n_matched))
}

/// SNIPS point estimate of the policy's value. The confidence bounds are
/// collapsed onto the value; use [`snips_with_ci`] for bootstrap intervals.
pub fn snips(dataset: &Dataset, policy_actions: &[Action]) -> Result<OpeEstimate, OpeError> {
    let (weights, outcomes) = weights_and_outcomes(dataset, policy_actions)?;
    let (value, ess, n_matched) = point_estimate(&weights, &outcomes)?;
    Ok(OpeEstimate {
        value,
        ci_low: value,
        ci_high: value,
        effective_sample_size: ess,
        n_matched,
    })
}

/// Linear-interpolation quantile of pre-sorted values.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn bootstrap_from_weights(
    weights: &[f64],
    outcomes: &[f64],
    params: &BootstrapParams,
) -> Result<BootstrapInterval, OpeError> {
    params.validate()?;
    let n = weights.len();
    // Replicates run in parallel but are collected in replicate order, with
    // one derived seed each, so the interval is independent of thread count.
    let replicate_values: Vec<Option<f64>> = (0..params.n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seed::rng(seed::derive_indexed(params.seed, "bootstrap", rep as u64));
            let mut num = 0.0;
            let mut den = 0.0;
            for _ in 0..n {
                let i = rand::Rng::random_range(&mut rng, 0..n);
                num += weights[i] * outcomes[i];
                den += weights[i];
            }
            (den != 0.0).then(|| num / den)
        })
        .collect();

    let mut values: Vec<f64> = replicate_values.iter().filter_map(|v| *v).collect();
    let n_degenerate = params.n_reps - values.len();
    if n_degenerate * 2 > params.n_reps {
        return Err(OpeError::TooManyDegenerate {
            n_degenerate,
            n_reps: params.n_reps,
        });
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - params.level) / 2.0;
    Ok(BootstrapInterval {
        ci_low: sorted_quantile(&values, alpha),
        ci_high: sorted_quantile(&values, 1.0 - alpha),
        n_degenerate,
    })
}

/// Percentile bootstrap interval for the SNIPS value of a policy.
pub fn bootstrap_ci(
    dataset: &Dataset,
    policy_actions: &[Action],
    params: &BootstrapParams,
) -> Result<BootstrapInterval, OpeError> {
    let (weights, outcomes) = weights_and_outcomes(dataset, policy_actions)?;
    // Fail fast when the full-sample estimate itself is undefined.
    point_estimate(&weights, &outcomes)?;
    bootstrap_from_weights(&weights, &outcomes, params)
}

/// SNIPS estimate with a percentile bootstrap confidence interval.
pub fn snips_with_ci(
    dataset: &Dataset,
    policy_actions: &[Action],
    params: &BootstrapParams,
) -> Result<OpeEstimate, OpeError> {
    let (weights, outcomes) = weights_and_outcomes(dataset, policy_actions)?;
    let (value, ess, n_matched) = point_estimate(&weights, &outcomes)?;
    let interval = bootstrap_from_weights(&weights, &outcomes, params)?;
    Ok(OpeEstimate {
        value,
        ci_low: interval.ci_low,
        ci_high: interval.ci_high,
        effective_sample_size: ess,
        n_matched,
    })
}

/// Half-width of the pooled interval of two estimates:
/// `sqrt(hw_a² + hw_b²)` with each half-width taken from the bootstrap CI.
pub fn pooled_halfwidth(a: &OpeEstimate, b: &OpeEstimate) -> f64 {
    let hw_a = (a.ci_high - a.ci_low) / 2.0;
    let hw_b = (b.ci_high - b.ci_low) / 2.0;
    (hw_a * hw_a + hw_b * hw_b).sqrt()
}

/// One point on an OPE-versus-contact-fraction curve. `estimate` is absent
/// when the induced policy had no overlap with the logs at this budget; such
/// points are flagged in place rather than dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpePoint {
    /// Achieved contact fraction (contacted rows over total rows).
    pub fraction: f64,
    pub estimate: Option<OpeEstimate>,
}

/// Policy value swept over contact budgets for one ranking of the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeCurve {
    pub points: Vec<OpePoint>,
}

/// Curves for the score-based ranking and its seeded random companion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeCurveSet {
    pub cate: OpeCurve,
    pub random: OpeCurve,
}

impl OpeCurveSet {
    /// Writes both curves as CSV with columns
    /// `fraction,value,ci_low,ci_high,ess,ordering`. Degenerate points keep
    /// their fraction and ordering but leave the estimate columns empty.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), OpeError> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "fraction,value,ci_low,ci_high,ess,ordering")?;
        for (curve, ordering) in [(&self.cate, "cate"), (&self.random, "random")] {
            for point in &curve.points {
                match &point.estimate {
                    Some(est) => writeln!(
                        file,
                        "{},{},{},{},{},{}",
                        point.fraction,
                        est.value,
                        est.ci_low,
                        est.ci_high,
                        est.effective_sample_size,
                        ordering
                    )?,
                    None => writeln!(file, "{},,,,,{}", point.fraction, ordering)?,
                }
            }
        }
        Ok(())
    }
}

/// Parameters for [`ope_curve`]: grid resolution plus the bootstrap run at
/// every point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpeCurveParams {
    pub n_grid: usize,
    pub bootstrap: BootstrapParams,
}

impl OpeCurveParams {
    pub fn new(seed: u64) -> Self {
        OpeCurveParams {
            n_grid: 50,
            bootstrap: BootstrapParams::new(seed),
        }
    }
}

/// Ranks rows by score descending (ties by id ascending) and returns row
/// indices in contact-priority order.
fn ranking_order(dataset: &Dataset, scores: &[f64]) -> Vec<usize> {
    let rows = dataset.rows();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| rows[a].id.cmp(&rows[b].id))
    });
    order
}

fn curve_for_order(
    dataset: &Dataset,
    order: &[usize],
    params: &OpeCurveParams,
    seed_label: &str,
) -> Result<OpeCurve, OpeError> {
    let n = dataset.len();
    let mut points = Vec::with_capacity(params.n_grid + 1);
    let mut actions = vec![Action::NoContact; n];
    let mut contacted = 0usize;
    for step in 0..=params.n_grid {
        let target = ((step as f64 / params.n_grid as f64) * n as f64).round() as usize;
        // The prefix grows monotonically with the grid, so each point only
        // flips the newly contacted rows.
        while contacted < target {
            actions[order[contacted]] = Action::Contact;
            contacted += 1;
        }
        let point_params = BootstrapParams {
            seed: seed::derive_indexed(params.bootstrap.seed, seed_label, step as u64),
            ..params.bootstrap
        };
        let estimate = match snips_with_ci(dataset, &actions, &point_params) {
            Ok(est) => Some(est),
            Err(OpeError::NoOverlap) | Err(OpeError::TooManyDegenerate { .. }) => None,
            Err(other) => return Err(other),
        };
        points.push(OpePoint {
            fraction: contacted as f64 / n as f64,
            estimate,
        });
    }
    Ok(OpeCurve { points })
}

/// Sweeps a contact budget over `{0, 1/n_grid, …, 1}` of the population.
///
/// At each budget the policy contacts exactly the top rows of the ranking
/// (score descending, ties by id); the recorded fraction is the achieved
/// one. The first and last points therefore evaluate the constant
/// never-contact and always-contact policies through the exact same
/// estimator path as [`snips`]. A companion curve built from a seeded random
/// permutation of the scores is returned alongside.
pub fn ope_curve(
    dataset: &Dataset,
    cate_scores: &[f64],
    params: &OpeCurveParams,
) -> Result<OpeCurveSet, OpeError> {
    if dataset.is_empty() {
        return Err(OpeError::Empty);
    }
    if cate_scores.len() != dataset.len() {
        return Err(OpeError::LengthMismatch {
            actions: cate_scores.len(),
            rows: dataset.len(),
        });
    }
    if params.n_grid == 0 {
        return Err(OpeError::InvalidGrid);
    }
    params.bootstrap.validate()?;

    let order = ranking_order(dataset, cate_scores);
    let cate = curve_for_order(dataset, &order, params, "curve-cate")?;

    let mut random_order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = seed::rng(seed::derive(params.bootstrap.seed, "curve-random-order"));
    rand::seq::SliceRandom::shuffle(random_order.as_mut_slice(), &mut rng);
    let random = curve_for_order(dataset, &random_order, params, "curve-random")?;

    Ok(OpeCurveSet { cate, random })
}

/// Where the propensities used for evaluation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    /// Propensities were logged with the data (or stored by the generator).
    Logged,
    /// Propensities were estimated from the data by a behavior model.
    Estimated,
}

impl std::fmt::Display for PropensitySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PropensitySource::Logged => write!(f, "logged"),
            PropensitySource::Estimated => write!(f, "estimated"),
        }
    }
}

/// One line of the policy comparison: a named policy, its estimate, and the
/// fraction of rows it would contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueEntry {
    pub policy: String,
    pub estimate: OpeEstimate,
    pub contact_rate: f64,
}

/// SNIPS comparison of the candidate policy against the logged behavior and
/// the two constant policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueReport {
    pub entries: Vec<PolicyValueEntry>,
    pub propensity_source: PropensitySource,
}

impl PolicyValueReport {
    pub fn entry(&self, policy: &str) -> Option<&PolicyValueEntry> {
        self.entries.iter().find(|e| e.policy == policy)
    }
}

/// Evaluates four policies on the same logs: the candidate (`new`), the
/// logged behavior replayed as a policy (`existing`), `always` contact, and
/// `never` contact. Each entry carries its own bootstrap interval and
/// contact rate.
pub fn policy_value_report(
    dataset: &Dataset,
    new_actions: &[Action],
    propensity_source: PropensitySource,
    params: &BootstrapParams,
) -> Result<PolicyValueReport, OpeError> {
    if new_actions.len() != dataset.len() {
        return Err(OpeError::LengthMismatch {
            actions: new_actions.len(),
            rows: dataset.len(),
        });
    }
    let logged: Vec<Action> = dataset.rows().iter().map(|r| r.action).collect();
    let always = vec![Action::Contact; dataset.len()];
    let never = vec![Action::NoContact; dataset.len()];
    let candidates: [(&str, &[Action]); 4] = [
        ("new", new_actions),
        ("existing", &logged),
        ("always", &always),
        ("never", &never),
    ];
    let mut entries = Vec::with_capacity(4);
    for (name, actions) in candidates {
        let entry_params = BootstrapParams {
            seed: seed::derive(params.seed, &format!("policy-{name}")),
            ..*params
        };
        let estimate = snips_with_ci(dataset, actions, &entry_params)?;
        let contact_rate =
            actions.iter().filter(|a| a.is_contact()).count() as f64 / dataset.len() as f64;
        entries.push(PolicyValueEntry {
            policy: name.to_string(),
            estimate,
            contact_rate,
        });
    }
    Ok(PolicyValueReport {
        entries,
        propensity_source,
    })
}
