//! Threshold contact policies over CATE estimates.
//!
//! A [`ThresholdPolicy`] turns an effect estimate into an action: contact
//! whenever the estimated effect reaches the threshold, leave alone
//! otherwise. The boundary case recommends contact — a row whose estimated
//! effect exactly equals the threshold is (weakly) worth the touch. The
//! default threshold of zero contacts exactly the rows with a non-negative
//! estimated effect.
//!
//! Policies are deployed as a single self-contained document embedding the
//! trained ensemble, the threshold, and provenance metadata, so a saved
//! policy reproduces its recommendations exactly wherever it is loaded.
//! Batch recommendations are exported as `id,cate,recommendation` CSV.

use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Action, Dataset};
use crate::forest::{ForestError, UpliftEnsemble};

/// Current policy document schema version.
pub const POLICY_DOC_VERSION: u32 = 1;

/// Errors from policy construction, application, and persistence.
#[derive(Debug, Error)]
pub enum PolicyError {
    /// Thresholds must be finite so that comparisons are total.
    #[error("threshold must be finite; got {value}")]
    NonFiniteThreshold { value: f64 },
    /// The underlying ensemble rejected the input.
    #[error(transparent)]
    Forest(#[from] ForestError),
    /// A stored document declares a schema version this build cannot read.
    #[error("policy document version {found} is not supported (this build reads <= {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    /// A recommendation file had a malformed row.
    #[error("invalid recommendation row {row}: {message}")]
    InvalidRecommendation { row: usize, message: String },
    /// Oracle evaluation needs stored potential outcomes on every row.
    #[error("row '{id}' has no stored potential outcomes; oracle value is unavailable")]
    MissingPotentials { id: String },
    /// Policy actions and dataset rows disagree in length.
    #[error("length mismatch: {actions} actions for {rows} rows")]
    LengthMismatch { actions: usize, rows: usize },
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Document (de)serialization failure — including truncated files.
    #[error("policy document is corrupt or truncated: {0}")]
    Serde(#[from] serde_json::Error),
    /// CSV failure while reading or writing recommendations.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Deterministic contact rule: contact iff the estimated effect is at least
/// the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub threshold: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy { threshold: 0.0 }
    }
}

impl ThresholdPolicy {
    pub fn new(threshold: f64) -> Result<Self, PolicyError> {
        if !threshold.is_finite() {
            return Err(PolicyError::NonFiniteThreshold { value: threshold });
        }
        Ok(ThresholdPolicy { threshold })
    }

    /// The action for a given effect estimate. The boundary contacts.
    pub fn decide(&self, cate: f64) -> Action {
        if cate >= self.threshold {
            Action::Contact
        } else {
            Action::NoContact
        }
    }
}

/// A single scored recommendation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: String,
    pub cate: f64,
    pub recommendation: Action,
}

/// Batch output of a policy over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationBatch {
    pub recommendations: Vec<Recommendation>,
    /// Fraction of rows recommended for contact.
    pub contact_rate: f64,
}

/// Applies the policy to one feature vector.
pub fn recommend(
    policy: &ThresholdPolicy,
    ensemble: &UpliftEnsemble,
    features: &[f64],
) -> Result<Action, PolicyError> {
    Ok(policy.decide(ensemble.predict_row(features)?))
}

/// Applies the policy to every row of a dataset, in row order.
pub fn recommend_batch(
    policy: &ThresholdPolicy,
    ensemble: &UpliftEnsemble,
    dataset: &Dataset,
) -> Result<RecommendationBatch, PolicyError> {
    let cates = ensemble.predict(dataset)?;
    let recommendations: Vec<Recommendation> = dataset
        .rows()
        .iter()
        .zip(&cates)
        .map(|(row, &cate)| Recommendation {
            id: row.id.clone(),
            cate,
            recommendation: policy.decide(cate),
        })
        .collect();
    let n_contact = recommendations
        .iter()
        .filter(|r| r.recommendation.is_contact())
        .count();
    let contact_rate = n_contact as f64 / recommendations.len().max(1) as f64;
    Ok(RecommendationBatch {
        recommendations,
        contact_rate,
    })
}

/// Mean outcome the dataset's stored potential outcomes assign to a policy:
/// `y1` where it contacts, `y0` where it does not. Only synthetic data
/// carries the potentials needed for this ground-truth check.
pub fn oracle_value(dataset: &Dataset, actions: &[Action]) -> Result<f64, PolicyError> {
    if actions.len() != dataset.len() {
        return Err(PolicyError::LengthMismatch {
            actions: actions.len(),
            rows: dataset.len(),
        });
    }
    let mut total = 0.0;
    for (row, action) in dataset.rows().iter().zip(actions) {
        let (y0, y1) = row
            .potential_outcomes
            .ok_or_else(|| PolicyError::MissingPotentials { id: row.id.clone() })?;
        let y = if action.is_contact() { y1 } else { y0 };
        total += y as u8 as f64;
    }
    Ok(total / dataset.len().max(1) as f64)
}

/// Provenance recorded alongside a saved policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    /// First and last training day index, when known.
    pub training_day_range: Option<(u32, u32)>,
    /// The decision day the policy was built for, when known.
    pub decision_day: Option<u32>,
    /// ISO date the document was created, when known.
    pub created: Option<String>,
}

/// Self-contained deployable policy: threshold, ensemble, and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub version: u32,
    pub threshold: f64,
    pub metadata: PolicyMetadata,
    pub ensemble: UpliftEnsemble,
}

impl PolicyDocument {
    pub fn new(
        policy: ThresholdPolicy,
        ensemble: UpliftEnsemble,
        metadata: PolicyMetadata,
    ) -> Self {
        PolicyDocument {
            version: POLICY_DOC_VERSION,
            threshold: policy.threshold,
            metadata,
            ensemble,
        }
    }

    pub fn policy(&self) -> ThresholdPolicy {
        ThresholdPolicy {
            threshold: self.threshold,
        }
    }
}

/// Writes the policy document as a single JSON file.
pub fn save_policy<P: AsRef<Path>>(document: &PolicyDocument, path: P) -> Result<(), PolicyError> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut writer, document)?;
    writer.flush()?;
    Ok(())
}

/// Loads a policy document, rejecting unreadable or future-versioned files
/// outright — there is no partial policy.
pub fn load_policy<P: AsRef<Path>>(path: P) -> Result<PolicyDocument, PolicyError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let document: PolicyDocument = serde_json::from_reader(reader)?;
    if document.version > POLICY_DOC_VERSION {
        return Err(PolicyError::UnsupportedVersion {
            found: document.version,
            supported: POLICY_DOC_VERSION,
        });
    }
    if !document.threshold.is_finite() {
        return Err(PolicyError::NonFiniteThreshold {
            value: document.threshold,
        });
    }
    Ok(document)
}

/// Writes recommendations as CSV with columns `id,cate,recommendation`.
pub fn save_recommendations<P: AsRef<Path>>(
    recommendations: &[Recommendation],
    path: P,
) -> Result<(), PolicyError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["id", "cate", "recommendation"])?;
    for rec in recommendations {
        writer.write_record([
            rec.id.as_str(),
            &format!("{}", rec.cate),
            &rec.recommendation.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a recommendations CSV written by [`save_recommendations`].
pub fn load_recommendations<P: AsRef<Path>>(path: P) -> Result<Vec<Recommendation>, PolicyError> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["id", "cate", "recommendation"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(PolicyError::InvalidRecommendation {
            row: 1,
            message: format!("expected header id,cate,recommendation; got '{headers:?}'"),
        });
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        let invalid = |message: String| PolicyError::InvalidRecommendation { row, message };
        let id = record
            .get(0)
            .ok_or_else(|| invalid("missing id".into()))?
            .to_string();
        let cate: f64 = record
            .get(1)
            .ok_or_else(|| invalid("missing cate".into()))?
            .parse()
            .map_err(|e| invalid(format!("bad cate: {e}")))?;
        let recommendation = Action::from_str(
            record
                .get(2)
                .ok_or_else(|| invalid("missing recommendation".into()))?,
        )
        .map_err(invalid)?;
        out.push(Recommendation {
            id,
            cate,
            recommendation,
        });
    }
    Ok(out)
}
