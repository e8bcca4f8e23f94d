//! Dataset schema and core observational-data operations.
//!
//! One row is one lead-day decision: the features visible at decision time,
//! the logged action, the realized outcome, and (for synthetic worlds) the
//! true propensity, the true effect, and both potential outcomes.
//!
//! Categorical features are one-hot expanded and missing numeric values are
//! sentinel-plus-indicator encoded at load time (see [`io`]), so rows carry a
//! plain numeric vector aligned to an ordered [`FeatureSchema`].

pub mod events;
pub mod io;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Sentinel stored in place of a missing numeric value. A companion
/// `<name>__missing` indicator column is added whenever a column contains
/// missing values, so the information is preserved rather than imputed.
pub const MISSING_NUMERIC_SENTINEL: f64 = 0.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("unrecognized column {0:?} (feature columns must be prefixed n_ or c_)")]
    UnrecognizedColumn(String),
    #[error("row {row}: {message}")]
    InvalidValue { row: usize, message: String },
    #[error("feature schema mismatch: expected {expected} columns, got {found}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("dataset is empty")]
    Empty,
    #[error(
        "day 0 is the registration day and is excluded from analysis; episodes start at day 1"
    )]
    RegistrationDay,
    #[error("holdout fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("cutoff ordinal {cutoff} exceeds dataset size {len}")]
    CutoffOutOfRange { cutoff: usize, len: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// The contact decision recorded for (or recommended to) a lead-day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    NoContact,
    Contact,
}

impl Action {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Action::NoContact),
            1 => Some(Action::Contact),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Action::NoContact => 0,
            Action::Contact => 1,
        }
    }

    pub fn is_contact(self) -> bool {
        matches!(self, Action::Contact)
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::NoContact => write!(f, "no_contact"),
            Action::Contact => write!(f, "contact"),
        }
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contact" => Ok(Action::Contact),
            "no_contact" => Ok(Action::NoContact),
            other => Err(format!("unknown action label '{other}'")),
        }
    }
}

/// Ordered feature descriptors shared by every row of a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.clone()) {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Stable hash of the ordered feature names; persisted with fitted
    /// models so a model is never applied to a differently-shaped dataset.
    pub fn schema_hash(&self) -> String {
        let joined = self.names.join("\u{1f}");
        format!("{:016x}", seed::derive(0, &joined))
    }
}

/// One lead-day decision record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub id: String,
    pub day_index: u32,
    pub features: Vec<f64>,
    pub action: Action,
    pub outcome: bool,
    /// Logging propensity P(contact | x) when known (synthetic truth or a
    /// fitted estimate attached by the trimming step).
    pub propensity: Option<f64>,
    /// True effect p1 - p0; synthetic worlds only.
    pub true_cate: Option<f64>,
    /// (y0, y1): outcomes under no-contact / contact; synthetic worlds only.
    pub potential_outcomes: Option<(bool, bool)>,
}

impl ObservationRow {
    fn validate(&self, row_number: usize, n_features: usize) -> Result<(), DataError> {
        if self.features.len() != n_features {
            return Err(DataError::SchemaMismatch {
                expected: n_features,
                found: self.features.len(),
            });
        }
        if self.day_index == 0 {
            return Err(DataError::InvalidValue {
                row: row_number,
                message: "day must be >= 1 (day 0 is excluded)".into(),
            });
        }
        for (j, v) in self.features.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::InvalidValue {
                    row: row_number,
                    message: format!("feature column {j} is not finite"),
                });
            }
        }
        if let Some(e) = self.propensity {
            if !(e > 0.0 && e < 1.0) {
                return Err(DataError::InvalidValue {
                    row: row_number,
                    message: format!("propensity {e} outside (0, 1)"),
                });
            }
        }
        if let Some(t) = self.true_cate {
            if !(-1.0..=1.0).contains(&t) {
                return Err(DataError::InvalidValue {
                    row: row_number,
                    message: format!("true_cate {t} outside [-1, 1]"),
                });
            }
        }
        if let Some((y0, y1)) = self.potential_outcomes {
            let factual = if self.action.is_contact() { y1 } else { y0 };
            if factual != self.outcome {
                return Err(DataError::InvalidValue {
                    row: row_number,
                    message: "outcome does not equal the potential outcome of the logged action"
                        .into(),
                });
            }
        }
        Ok(())
    }
}

/// How [`Dataset::split_holdout`] partitions rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutSplit {
    /// Seeded shuffle; `fraction` of rows go to the holdout.
    Fraction { fraction: f64, seed: u64 },
    /// Deterministic split on storage order (assumed time-ordered): the
    /// first `cutoff` rows are training, the remainder holdout.
    CutoffOrdinal { cutoff: usize },
}

/// An immutable collection of decision observations sharing one schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<ObservationRow>,
    horizon_days: u32,
}

impl Dataset {
    /// Validates every row against the schema and the domain invariants.
    pub fn new(
        schema: FeatureSchema,
        rows: Vec<ObservationRow>,
        horizon_days: u32,
    ) -> Result<Self, DataError> {
        let mut ids = std::collections::HashSet::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            row.validate(i + 1, schema.len())?;
            if !ids.insert(row.id.clone()) {
                return Err(DataError::DuplicateId(row.id.clone()));
            }
        }
        Ok(Self {
            schema,
            rows,
            horizon_days,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[ObservationRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn horizon_days(&self) -> u32 {
        self.horizon_days
    }

    /// Returns exactly the rows with the given episode day. Day 0 is the
    /// registration day and is rejected. A day with no rows yields an empty
    /// dataset, not an error.
    pub fn slice_episode(&self, day: u32) -> Result<Dataset, DataError> {
        if day == 0 {
            return Err(DataError::RegistrationDay);
        }
        let rows = self
            .rows
            .iter()
            .filter(|r| r.day_index == day)
            .cloned()
            .collect();
        Ok(Dataset {
            schema: self.schema.clone(),
            rows,
            horizon_days: self.horizon_days,
        })
    }

    /// Distinct episode days present, ascending.
    pub fn days(&self) -> Vec<u32> {
        let mut days: Vec<u32> = self.rows.iter().map(|r| r.day_index).collect();
        days.sort_unstable();
        days.dedup();
        days
    }

    /// Exact partition into (train, holdout). Fraction mode shuffles with a
    /// seeded RNG; ordinal mode cuts on storage order. Both sides preserve
    /// the original row order.
    pub fn split_holdout(&self, split: HoldoutSplit) -> Result<(Dataset, Dataset), DataError> {
        if self.rows.is_empty() {
            return Err(DataError::Empty);
        }
        let n = self.rows.len();
        let holdout_indices: Vec<usize> = match split {
            HoldoutSplit::Fraction { fraction, seed } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(DataError::InvalidFraction(fraction));
                }
                let n_holdout = ((fraction * n as f64).round() as usize).min(n);
                let mut indices: Vec<usize> = (0..n).collect();
                use rand::seq::SliceRandom;
                indices.shuffle(&mut seed::rng(seed));
                let mut chosen: Vec<usize> = indices[..n_holdout].to_vec();
                chosen.sort_unstable();
                chosen
            }
            HoldoutSplit::CutoffOrdinal { cutoff } => {
                if cutoff > n {
                    return Err(DataError::CutoffOutOfRange { cutoff, len: n });
                }
                (cutoff..n).collect()
            }
        };
        let in_holdout = {
            let mut mask = vec![false; n];
            for &i in &holdout_indices {
                mask[i] = true;
            }
            mask
        };
        let mut train = Vec::with_capacity(n - holdout_indices.len());
        let mut holdout = Vec::with_capacity(holdout_indices.len());
        for (i, row) in self.rows.iter().enumerate() {
            if in_holdout[i] {
                holdout.push(row.clone());
            } else {
                train.push(row.clone());
            }
        }
        Ok((
            Dataset {
                schema: self.schema.clone(),
                rows: train,
                horizon_days: self.horizon_days,
            },
            Dataset {
                schema: self.schema.clone(),
                rows: holdout,
                horizon_days: self.horizon_days,
            },
        ))
    }

    /// Projects the dataset onto a feature subset, keeping schema order.
    pub fn select_features(&self, names: &[String]) -> Result<Dataset, DataError> {
        let mut keep = Vec::with_capacity(names.len());
        for name in names {
            match self.schema.index_of(name) {
                Some(idx) => keep.push(idx),
                None => return Err(DataError::UnknownFeature(name.clone())),
            }
        }
        keep.sort_unstable();
        keep.dedup();
        let schema =
            FeatureSchema::new(keep.iter().map(|&i| self.schema.names[i].clone()).collect())?;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut row = r.clone();
                row.features = keep.iter().map(|&i| r.features[i]).collect();
                row
            })
            .collect();
        Ok(Dataset {
            schema,
            rows,
            horizon_days: self.horizon_days,
        })
    }

    /// Copy of one feature column.
    pub fn feature_column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[index]).collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.rows.iter().map(|r| r.action).collect()
    }

    pub fn outcomes(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.outcome).collect()
    }

    /// Returns a copy with each row's propensity field replaced.
    pub fn with_propensities(&self, propensities: &[f64]) -> Result<Dataset, DataError> {
        if propensities.len() != self.rows.len() {
            return Err(DataError::SchemaMismatch {
                expected: self.rows.len(),
                found: propensities.len(),
            });
        }
        let rows = self
            .rows
            .iter()
            .zip(propensities)
            .map(|(r, &e)| {
                let mut row = r.clone();
                row.propensity = Some(e);
                row
            })
            .collect();
        Dataset::new(self.schema.clone(), rows, self.horizon_days)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_dataset(days: &[u32]) -> Dataset {
        let schema = FeatureSchema::new(vec!["x0".into()]).unwrap();
        let rows = days
            .iter()
            .enumerate()
            .map(|(i, &d)| ObservationRow {
                id: format!("r{i:03}"),
                day_index: d,
                features: vec![i as f64],
                action: if i % 2 == 0 {
                    Action::Contact
                } else {
                    Action::NoContact
                },
                outcome: i % 3 == 0,
                propensity: None,
                true_cate: None,
                potential_outcomes: None,
            })
            .collect();
        Dataset::new(schema, rows, 90).unwrap()
    }

    #[test]
    fn slice_filters_exactly_one_day() {
        let ds = tiny_dataset(&[1, 2, 1, 3, 1]);
        let day1 = ds.slice_episode(1).unwrap();
        assert_eq!(day1.len(), 3);
        assert!(day1.rows().iter().all(|r| r.day_index == 1));
    }

    #[test]
    fn slice_day_zero_is_rejected() {
        let ds = tiny_dataset(&[1, 2]);
        assert!(matches!(
            ds.slice_episode(0),
            Err(DataError::RegistrationDay)
        ));
    }

    #[test]
    fn slice_missing_day_is_empty_not_error() {
        let ds = tiny_dataset(&[1, 2]);
        assert_eq!(ds.slice_episode(7).unwrap().len(), 0);
    }

    #[test]
    fn slices_partition_the_dataset() {
        let ds = tiny_dataset(&[1, 2, 1, 3, 2, 2]);
        let total: usize = ds
            .days()
            .iter()
            .map(|&d| ds.slice_episode(d).unwrap().len())
            .sum();
        assert_eq!(total, ds.len());
    }

    #[test]
    fn fraction_split_is_deterministic_and_exact() {
        let ds = tiny_dataset(&vec![1; 100]);
        let (tr1, ho1) = ds
            .split_holdout(HoldoutSplit::Fraction {
                fraction: 0.2,
                seed: 7,
            })
            .unwrap();
        let (tr2, ho2) = ds
            .split_holdout(HoldoutSplit::Fraction {
                fraction: 0.2,
                seed: 7,
            })
            .unwrap();
        assert_eq!(tr1.len(), 80);
        assert_eq!(ho1.len(), 20);
        assert_eq!(tr1, tr2);
        assert_eq!(ho1, ho2);
        let mut ids: Vec<&str> = tr1
            .rows()
            .iter()
            .chain(ho1.rows())
            .map(|r| r.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn different_seeds_give_different_partitions() {
        let ds = tiny_dataset(&vec![1; 100]);
        let holdout_ids = |seed: u64| -> Vec<String> {
            let (_, ho) = ds
                .split_holdout(HoldoutSplit::Fraction {
                    fraction: 0.2,
                    seed,
                })
                .unwrap();
            ho.rows().iter().map(|r| r.id.clone()).collect()
        };
        assert_ne!(holdout_ids(1), holdout_ids(2));
    }

    #[test]
    fn ordinal_cutoff_keeps_last_rows_in_holdout() {
        let ds = tiny_dataset(&vec![1; 100]);
        let (train, holdout) = ds
            .split_holdout(HoldoutSplit::CutoffOrdinal { cutoff: 90 })
            .unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(holdout.len(), 10);
        assert_eq!(holdout.rows()[0].id, "r090");
        assert_eq!(holdout.rows()[9].id, "r099");
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let ds = tiny_dataset(&[1, 1]);
        assert!(matches!(
            ds.split_holdout(HoldoutSplit::Fraction {
                fraction: 1.0,
                seed: 0
            }),
            Err(DataError::InvalidFraction(_))
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected_by_name() {
        let schema = FeatureSchema::new(vec![]).unwrap();
        let row = ObservationRow {
            id: "dup".into(),
            day_index: 1,
            features: vec![],
            action: Action::Contact,
            outcome: true,
            propensity: None,
            true_cate: None,
            potential_outcomes: None,
        };
        let err = Dataset::new(schema, vec![row.clone(), row], 90).unwrap_err();
        match err {
            DataError::DuplicateId(id) => assert_eq!(id, "dup"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn feature_selection_projects_in_schema_order() {
        let schema = FeatureSchema::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let rows = vec![ObservationRow {
            id: "r0".into(),
            day_index: 1,
            features: vec![1.0, 2.0, 3.0],
            action: Action::Contact,
            outcome: false,
            propensity: None,
            true_cate: None,
            potential_outcomes: None,
        }];
        let ds = Dataset::new(schema, rows, 90).unwrap();
        let projected = ds.select_features(&["c".into(), "a".into()]).unwrap();
        assert_eq!(projected.schema().names(), ["a", "c"]);
        assert_eq!(projected.rows()[0].features, vec![1.0, 3.0]);
        assert!(ds.select_features(&["nope".into()]).is_err());
    }
}
