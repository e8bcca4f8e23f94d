//! Randomized-trial simulation and analysis for contact policies.
//!
//! The simulator runs the deployment design end to end on a synthetic world:
//! every lead is assigned to an arm by a coin flip, the treatment arm's
//! account executive follows the policy's recommendation with a configurable
//! compliance probability (falling back to their usual behavior otherwise),
//! the control arm always behaves as usual, and the realized outcome is read
//! off the lead's stored potential outcomes for whichever action was
//! actually executed.
//!
//! The analysis side consumes either a simulated [`TrialResult`] or a raw
//! counts table (the same four-row CSV the simulator exports), so published
//! experiment summaries can be re-analyzed without access to row-level data.
//! It reports a sample-ratio-mismatch check, per-arm delivery rates with
//! Wilson intervals, a one-sided two-proportion test, and the per-recommendation
//! subgroup breakdown.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::data::synthetic::{sigmoid, LinearLogit};
use crate::data::{Action, Dataset};
use crate::seed;

/// Errors from trial simulation and analysis.
#[derive(Debug, Error)]
pub enum TrialError {
    /// A probability parameter left the unit interval.
    #[error("{name} must be in [0, 1]; got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    /// Recommendations and world rows disagree in length.
    #[error("length mismatch: {actions} recommendations for {rows} rows")]
    LengthMismatch { actions: usize, rows: usize },
    /// Simulation needs stored potential outcomes on every row.
    #[error("row '{id}' has no stored potential outcomes; simulation is impossible")]
    MissingPotentials { id: String },
    /// An arm ended up empty, so comparative statistics are undefined.
    #[error("both arms must be non-empty")]
    EmptyArm,
    /// Count arithmetic would be inconsistent (e.g. successes exceed n).
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    /// The expected assignment ratio must be a proper probability.
    #[error("expected_ratio must be in (0, 1); got {0}")]
    InvalidRatio(f64),
    /// Confidence level must lie strictly between 0 and 1.
    #[error("confidence level must be in (0, 1); got {0}")]
    InvalidLevel(f64),
    /// A counts CSV row could not be parsed.
    #[error("invalid counts row {row}: {message}")]
    BadCountsFile { row: usize, message: String },
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// CSV failure while reading or writing counts.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How a control-arm (or non-compliant) account executive decides to
/// contact, absent a recommendation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlContactModel {
    /// Contact each lead independently with a fixed rate.
    ConstantRate { rate: f64 },
    /// Contact with probability `sigmoid(intercept + w . x)` over the
    /// leading numeric features.
    Logistic(LinearLogit),
}

impl ControlContactModel {
    fn contact_probability(&self, features: &[f64]) -> f64 {
        match self {
            ControlContactModel::ConstantRate { rate } => *rate,
            ControlContactModel::Logistic(logit) => sigmoid(logit.eval(features)),
        }
    }

    fn validate(&self) -> Result<(), TrialError> {
        if let ControlContactModel::ConstantRate { rate } = self {
            if !(0.0..=1.0).contains(rate) {
                return Err(TrialError::InvalidProbability {
                    name: "control contact rate",
                    value: *rate,
                });
            }
        }
        Ok(())
    }
}

/// Design of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    /// Probability a lead lands in the treatment arm.
    pub assignment_probability: f64,
    /// Probability the treatment-arm executive follows the recommendation.
    pub treatment_compliance: f64,
    pub control_contact_model: ControlContactModel,
    /// Outcome horizon in days, recorded for provenance.
    pub horizon_days: u32,
    pub seed: u64,
}

impl TrialConfig {
    fn validate(&self) -> Result<(), TrialError> {
        let probs: [(&'static str, f64); 2] = [
            ("assignment_probability", self.assignment_probability),
            ("treatment_compliance", self.treatment_compliance),
        ];
        for (name, value) in probs {
            if !(0.0..=1.0).contains(&value) {
                return Err(TrialError::InvalidProbability { name, value });
            }
        }
        self.control_contact_model.validate()
    }
}

/// Trial arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treatment,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Control => write!(f, "control"),
            Arm::Treatment => write!(f, "treatment"),
        }
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "control" => Ok(Arm::Control),
            "treatment" => Ok(Arm::Treatment),
            other => Err(format!("unknown group label '{other}'")),
        }
    }
}

/// One lead's record in a simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialItem {
    pub id: String,
    pub arm: Arm,
    pub recommendation: Action,
    pub executed: Action,
    pub outcome: bool,
}

/// Full row-level result of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrialConfig,
    pub items: Vec<TrialItem>,
}

/// One cell of the counts table: an (arm, recommendation) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub group: Arm,
    pub recommendation: Action,
    pub n: u64,
    /// Successful outcomes.
    pub deliveries: u64,
    /// Rows whose executed action was contact.
    pub contacts: u64,
    /// Rows whose executed action matched the recommendation.
    pub compliant: u64,
}

impl CountsRow {
    fn validate(&self, row: usize) -> Result<(), TrialError> {
        for (name, value) in [
            ("deliveries", self.deliveries),
            ("contacts", self.contacts),
            ("compliant", self.compliant),
        ] {
            if value > self.n {
                return Err(TrialError::BadCountsFile {
                    row,
                    message: format!("{name} ({value}) exceeds n ({})", self.n),
                });
            }
        }
        Ok(())
    }
}

/// The four-cell summary a trial reduces to; the only input the analysis
/// ever sees, so row-level results and published tables share one code path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub rows: Vec<CountsRow>,
}

/// Canonical cell order for exports.
const CELL_ORDER: [(Arm, Action); 4] = [
    (Arm::Control, Action::Contact),
    (Arm::Control, Action::NoContact),
    (Arm::Treatment, Action::Contact),
    (Arm::Treatment, Action::NoContact),
];

impl TrialResult {
    /// Reduces the row-level result to the four-cell counts table.
    pub fn counts(&self) -> CountsTable {
        let mut rows: Vec<CountsRow> = CELL_ORDER
            .iter()
            .map(|&(group, recommendation)| CountsRow {
                group,
                recommendation,
                n: 0,
                deliveries: 0,
                contacts: 0,
                compliant: 0,
            })
            .collect();
        for item in &self.items {
            let cell = rows
                .iter_mut()
                .find(|r| r.group == item.arm && r.recommendation == item.recommendation)
                .expect("cell order covers all arm/recommendation pairs");
            cell.n += 1;
            cell.deliveries += item.outcome as u64;
            cell.contacts += item.executed.is_contact() as u64;
            cell.compliant += (item.executed == item.recommendation) as u64;
        }
        CountsTable { rows }
    }
}

impl CountsTable {
    /// Writes the table as CSV:
    /// `group,recommendation,n,deliveries,contacts,compliant`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), TrialError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            "group",
            "recommendation",
            "n",
            "deliveries",
            "contacts",
            "compliant",
        ])?;
        for row in &self.rows {
            writer.write_record([
                row.group.to_string(),
                row.recommendation.to_string(),
                row.n.to_string(),
                row.deliveries.to_string(),
                row.contacts.to_string(),
                row.compliant.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a counts CSV. Cells may appear in any order; missing cells are
    /// zero, duplicates are rejected.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self, TrialError> {
        let mut reader = csv::ReaderBuilder::new().from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected = [
            "group",
            "recommendation",
            "n",
            "deliveries",
            "contacts",
            "compliant",
        ];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(TrialError::BadCountsFile {
                row: 1,
                message: format!(
                    "expected header group,recommendation,n,deliveries,contacts,compliant; got '{headers:?}'"
                ),
            });
        }
        let mut cells: Vec<Option<CountsRow>> = vec![None; CELL_ORDER.len()];
        for (i, record) in reader.records().enumerate() {
            let row_no = i + 2;
            let record = record?;
            let bad = |message: String| TrialError::BadCountsFile {
                row: row_no,
                message,
            };
            let field = |idx: usize, name: &str| {
                record
                    .get(idx)
                    .map(str::to_string)
                    .ok_or_else(|| bad(format!("missing {name}")))
            };
            let group = Arm::from_str(&field(0, "group")?).map_err(bad)?;
            let recommendation = Action::from_str(&field(1, "recommendation")?).map_err(bad)?;
            let parse_count = |idx: usize, name: &str| -> Result<u64, TrialError> {
                field(idx, name)?
                    .parse::<u64>()
                    .map_err(|e| bad(format!("bad {name}: {e}")))
            };
            let parsed = CountsRow {
                group,
                recommendation,
                n: parse_count(2, "n")?,
                deliveries: parse_count(3, "deliveries")?,
                contacts: parse_count(4, "contacts")?,
                compliant: parse_count(5, "compliant")?,
            };
            parsed.validate(row_no)?;
            let slot = CELL_ORDER
                .iter()
                .position(|&(g, r)| g == group && r == recommendation)
                .expect("both enums are exhaustive");
            if cells[slot].is_some() {
                return Err(bad(format!("duplicate cell for {group}/{recommendation}")));
            }
            cells[slot] = Some(parsed);
        }
        let rows = CELL_ORDER
            .iter()
            .zip(cells)
            .map(|(&(group, recommendation), cell)| {
                cell.unwrap_or(CountsRow {
                    group,
                    recommendation,
                    n: 0,
                    deliveries: 0,
                    contacts: 0,
                    compliant: 0,
                })
            })
            .collect();
        Ok(CountsTable { rows })
    }
}

/// Runs one simulated trial of the recommendations over a synthetic world.
///
/// Per-lead randomness is derived from the lead's id and the config seed
/// (three draws per lead in fixed order: arm, compliance, baseline action),
/// so results do not depend on row storage order or thread count.
pub fn simulate_trial(
    world: &Dataset,
    recommendations: &[Action],
    config: &TrialConfig,
) -> Result<TrialResult, TrialError> {
    config.validate()?;
    if recommendations.len() != world.len() {
        return Err(TrialError::LengthMismatch {
            actions: recommendations.len(),
            rows: world.len(),
        });
    }
    let mut items = Vec::with_capacity(world.len());
    for (row, &recommendation) in world.rows().iter().zip(recommendations) {
        let (y0, y1) = row
            .potential_outcomes
            .ok_or_else(|| TrialError::MissingPotentials { id: row.id.clone() })?;
        let mut rng = seed::rng(seed::derive(config.seed, &row.id));
        let u_arm: f64 = rand::Rng::random(&mut rng);
        let u_comply: f64 = rand::Rng::random(&mut rng);
        let u_baseline: f64 = rand::Rng::random(&mut rng);

        let arm = if u_arm < config.assignment_probability {
            Arm::Treatment
        } else {
            Arm::Control
        };
        let baseline = if u_baseline
            < config
                .control_contact_model
                .contact_probability(&row.features)
        {
            Action::Contact
        } else {
            Action::NoContact
        };
        let executed = match arm {
            Arm::Treatment if u_comply < config.treatment_compliance => recommendation,
            _ => baseline,
        };
        let outcome = if executed.is_contact() { y1 } else { y0 };
        items.push(TrialItem {
            id: row.id.clone(),
            arm,
            recommendation,
            executed,
            outcome,
        });
    }
    Ok(TrialResult {
        config: config.clone(),
        items,
    })
}

/// Chi-squared sample-ratio-mismatch test with one degree of freedom.
/// `expected_ratio` is the intended treatment share.
pub fn srm_test(n_control: u64, n_treatment: u64, expected_ratio: f64) -> Result<f64, TrialError> {
    if !(expected_ratio > 0.0 && expected_ratio < 1.0) {
        return Err(TrialError::InvalidRatio(expected_ratio));
    }
    let total = n_control + n_treatment;
    if total == 0 {
        return Err(TrialError::EmptyArm);
    }
    let expected_treatment = total as f64 * expected_ratio;
    let expected_control = total as f64 * (1.0 - expected_ratio);
    let chi2 = (n_control as f64 - expected_control).powi(2) / expected_control
        + (n_treatment as f64 - expected_treatment).powi(2) / expected_treatment;
    let dist = ChiSquared::new(1.0).expect("df 1 is valid");
    Ok(1.0 - dist.cdf(chi2))
}

/// Which test statistic [`two_proportion_test`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    /// Pooled two-proportion z-test (the default).
    PooledZ,
    /// Welch's t-test on the 0/1 outcomes.
    Welch,
}

/// One-sided test that arm 2's proportion exceeds arm 1's:
/// small p-values favor `x2/n2 > x1/n1`.
pub fn two_proportion_test(
    x1: u64,
    n1: u64,
    x2: u64,
    n2: u64,
    method: TestMethod,
) -> Result<f64, TrialError> {
    if n1 == 0 || n2 == 0 {
        return Err(TrialError::EmptyArm);
    }
    if x1 > n1 || x2 > n2 {
        return Err(TrialError::InvalidCounts(format!(
            "successes exceed trials: ({x1}/{n1}), ({x2}/{n2})"
        )));
    }
    let p1 = x1 as f64 / n1 as f64;
    let p2 = x2 as f64 / n2 as f64;
    match method {
        TestMethod::PooledZ => {
            let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
            let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
            if se == 0.0 {
                // All successes or all failures in both arms: no evidence
                // either way.
                return Ok(0.5);
            }
            let z = (p2 - p1) / se;
            let normal = Normal::new(0.0, 1.0).expect("standard normal is valid");
            Ok(1.0 - normal.cdf(z))
        }
        TestMethod::Welch => {
            if n1 < 2 || n2 < 2 {
                return Err(TrialError::InvalidCounts(
                    "Welch's test needs at least two observations per arm".into(),
                ));
            }
            // Sample variances of 0/1 data with the n-1 correction.
            let v1 = p1 * (1.0 - p1) * n1 as f64 / (n1 as f64 - 1.0);
            let v2 = p2 * (1.0 - p2) * n2 as f64 / (n2 as f64 - 1.0);
            let se_sq = v1 / n1 as f64 + v2 / n2 as f64;
            if se_sq == 0.0 {
                return Ok(0.5);
            }
            let t = (p2 - p1) / se_sq.sqrt();
            let df = se_sq * se_sq
                / ((v1 / n1 as f64).powi(2) / (n1 as f64 - 1.0)
                    + (v2 / n2 as f64).powi(2) / (n2 as f64 - 1.0));
            let dist = StudentsT::new(0.0, 1.0, df)
                .map_err(|e| TrialError::InvalidCounts(format!("bad Welch df: {e}")))?;
            Ok(1.0 - dist.cdf(t))
        }
    }
}

/// Wilson score interval for a binomial proportion. The boundary cases pin
/// the touched end exactly: `x = 0` gives a lower bound of 0 and `x = n`
/// gives an upper bound of 1.
pub fn proportion_ci(x: u64, n: u64, level: f64) -> Result<(f64, f64), TrialError> {
    if n == 0 {
        return Err(TrialError::EmptyArm);
    }
    if x > n {
        return Err(TrialError::InvalidCounts(format!(
            "successes exceed trials: {x}/{n}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(TrialError::InvalidLevel(level));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal is valid");
    let z = normal.inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let n_f = n as f64;
    let p_hat = x as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p_hat + z2 / (2.0 * n_f)) / denom;
    let half = (z / denom) * (p_hat * (1.0 - p_hat) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    let low = if x == 0 { 0.0 } else { center - half };
    let high = if x == n { 1.0 } else { center + half };
    Ok((low, high))
}

/// Per-arm summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub n: u64,
    pub deliveries: u64,
    pub delivery_rate: f64,
    pub rate_ci: (f64, f64),
    /// Fraction of the arm whose executed action matched the recommendation.
    pub compliance_rate: f64,
    /// Fraction of the arm that was actually contacted.
    pub contact_rate: f64,
}

/// One row of the per-recommendation subgroup table. Rates are absent when
/// the subgroup is empty on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    pub recommendation: Action,
    pub control_n: u64,
    pub control_deliveries: u64,
    pub control_rate: Option<f64>,
    pub treatment_n: u64,
    pub treatment_deliveries: u64,
    pub treatment_rate: Option<f64>,
    pub absolute_effect: Option<f64>,
}

/// Full analysis of a two-arm trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAnalysis {
    pub srm_p: f64,
    pub control: ArmSummary,
    pub treatment: ArmSummary,
    /// Treatment minus control delivery rate.
    pub absolute_effect: f64,
    /// Absolute effect over the control rate; absent when the control rate
    /// is zero.
    pub relative_effect: Option<f64>,
    /// One-sided p-value that treatment exceeds control.
    pub one_sided_p: f64,
    pub method: TestMethod,
    pub subgroups: Vec<SubgroupSummary>,
}

fn arm_summary(rows: &[&CountsRow], level: f64) -> Result<ArmSummary, TrialError> {
    let n: u64 = rows.iter().map(|r| r.n).sum();
    if n == 0 {
        return Err(TrialError::EmptyArm);
    }
    let deliveries: u64 = rows.iter().map(|r| r.deliveries).sum();
    let contacts: u64 = rows.iter().map(|r| r.contacts).sum();
    let compliant: u64 = rows.iter().map(|r| r.compliant).sum();
    Ok(ArmSummary {
        n,
        deliveries,
        delivery_rate: deliveries as f64 / n as f64,
        rate_ci: proportion_ci(deliveries, n, level)?,
        compliance_rate: compliant as f64 / n as f64,
        contact_rate: contacts as f64 / n as f64,
    })
}

/// Analyzes a counts table: the single statistics path shared by simulated
/// results and externally published summaries.
pub fn analyze_counts(
    table: &CountsTable,
    method: TestMethod,
) -> Result<TrialAnalysis, TrialError> {
    for (i, row) in table.rows.iter().enumerate() {
        row.validate(i + 2)?;
    }
    let control_rows: Vec<&CountsRow> = table
        .rows
        .iter()
        .filter(|r| r.group == Arm::Control)
        .collect();
    let treatment_rows: Vec<&CountsRow> = table
        .rows
        .iter()
        .filter(|r| r.group == Arm::Treatment)
        .collect();
    let level = 0.95;
    let control = arm_summary(&control_rows, level)?;
    let treatment = arm_summary(&treatment_rows, level)?;

    let absolute_effect = treatment.delivery_rate - control.delivery_rate;
    let relative_effect =
        (control.delivery_rate != 0.0).then(|| absolute_effect / control.delivery_rate);
    let one_sided_p = two_proportion_test(
        control.deliveries,
        control.n,
        treatment.deliveries,
        treatment.n,
        method,
    )?;
    let srm_p = srm_test(control.n, treatment.n, 0.5)?;

    let mut subgroups = Vec::with_capacity(2);
    for recommendation in [Action::Contact, Action::NoContact] {
        let pick = |rows: &[&CountsRow]| -> (u64, u64) {
            rows.iter()
                .filter(|r| r.recommendation == recommendation)
                .fold((0, 0), |(n, d), r| (n + r.n, d + r.deliveries))
        };
        let (control_n, control_deliveries) = pick(&control_rows);
        let (treatment_n, treatment_deliveries) = pick(&treatment_rows);
        let control_rate = (control_n > 0).then(|| control_deliveries as f64 / control_n as f64);
        let treatment_rate =
            (treatment_n > 0).then(|| treatment_deliveries as f64 / treatment_n as f64);
        let absolute = match (control_rate, treatment_rate) {
            (Some(c), Some(t)) => Some(t - c),
            _ => None,
        };
        subgroups.push(SubgroupSummary {
            recommendation,
            control_n,
            control_deliveries,
            control_rate,
            treatment_n,
            treatment_deliveries,
            treatment_rate,
            absolute_effect: absolute,
        });
    }

    Ok(TrialAnalysis {
        srm_p,
        control,
        treatment,
        absolute_effect,
        relative_effect,
        one_sided_p,
        method,
        subgroups,
    })
}

/// Analyzes a simulated trial by reducing it to counts first, so the result
/// is identical to analyzing the exported table.
pub fn analyze_trial(
    result: &TrialResult,
    method: TestMethod,
) -> Result<TrialAnalysis, TrialError> {
    analyze_counts(&result.counts(), method)
}
