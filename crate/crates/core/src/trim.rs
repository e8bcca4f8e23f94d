//! Positivity trimming.
//!
//! Inverse-propensity estimators blow up when logged propensities approach
//! 0 or 1, because a handful of rows receive enormous weights. Trimming
//! drops rows whose propensity falls outside a retention interval and
//! reports exactly what was removed on each side.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum TrimError {
    #[error("trim bounds ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("row {row} has no propensity; fit or attach propensities before trimming")]
    MissingPropensity { row: usize },
}

/// Closed retention interval for propensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for TrimBounds {
    fn default() -> Self {
        Self { lo: 0.01, hi: 0.99 }
    }
}

impl TrimBounds {
    fn validate(self) -> Result<(), TrimError> {
        if self.lo > 0.0 && self.hi < 1.0 && self.lo <= self.hi {
            Ok(())
        } else {
            Err(TrimError::InvalidBounds {
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Boundary values are retained: the interval is closed on both ends.
    pub fn retains(self, propensity: f64) -> bool {
        propensity >= self.lo && propensity <= self.hi
    }
}

/// What a trimming pass did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    pub bounds: TrimBounds,
    pub n_input: usize,
    pub n_retained: usize,
    pub n_trimmed_low: usize,
    pub n_trimmed_high: usize,
}

/// Drops rows with propensity outside `bounds` (closed interval). Every row
/// must carry a propensity. Applying the same bounds to the output removes
/// nothing further.
pub fn trim_positivity(
    dataset: &Dataset,
    bounds: TrimBounds,
) -> Result<(Dataset, TrimReport), TrimError> {
    bounds.validate()?;
    let mut retained = Vec::with_capacity(dataset.len());
    let mut n_low = 0usize;
    let mut n_high = 0usize;
    for (i, row) in dataset.rows().iter().enumerate() {
        let e = row
            .propensity
            .ok_or(TrimError::MissingPropensity { row: i + 1 })?;
        if e < bounds.lo {
            n_low += 1;
        } else if e > bounds.hi {
            n_high += 1;
        } else {
            retained.push(row.clone());
        }
    }
    let report = TrimReport {
        bounds,
        n_input: dataset.len(),
        n_retained: retained.len(),
        n_trimmed_low: n_low,
        n_trimmed_high: n_high,
    };
    let trimmed = Dataset::new(dataset.schema().clone(), retained, dataset.horizon_days())
        .expect("retained rows were already valid");
    Ok((trimmed, report))
}
