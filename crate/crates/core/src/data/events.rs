//! Communication-event logs and action labeling.
//!
//! Raw CRM logs record every touch between an account executive and a lead.
//! To turn a lead-day into a binary decision observation we look at the
//! 24-hour window starting at the decision hour and ask whether the first
//! human touch in it was a discretionary outbound contact:
//!
//! * automated system messages never count as contacts and are skipped;
//! * a window whose first relevant event is lead-initiated, or an outbound
//!   call the lead prescheduled earlier, is not a free decision — the
//!   lead-day is excluded from policy data;
//! * otherwise an AE-initiated event labels the day `Contact`, and an empty
//!   window labels it `NoContact`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::DataError;

/// Who started the touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initiator {
    Ae,
    Lead,
    System,
}

/// One row of the raw communication log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunicationEvent {
    pub lead_id: String,
    pub timestamp: NaiveDateTime,
    pub initiator: Initiator,
    pub channel: String,
    /// True when the touch was booked in advance by the lead (e.g. a
    /// scheduled callback), making it an obligation rather than a choice.
    pub prescheduled: bool,
}

/// Label produced for one lead-day decision window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    Contact,
    NoContact,
    /// The window was not a free decision (lead-initiated or prescheduled
    /// first touch); the row must not enter policy training or evaluation.
    Excluded,
}

/// Labels one lead's decision window: `[decision_day + decision_hour,
/// decision_day + decision_hour + 24h)`.
///
/// Events are matched on that half-open interval; system-initiated events are
/// ignored entirely. The earliest remaining event decides the label as
/// described in the module docs. Events carrying other lead ids may be
/// present; callers are expected to pre-filter, and this function labels the
/// slice it is given as a single lead's history.
pub fn label_actions(
    events: &[CommunicationEvent],
    decision_day: NaiveDate,
    decision_hour: u32,
) -> Result<ActionLabel, DataError> {
    if decision_hour >= 24 {
        return Err(DataError::InvalidValue {
            row: 0,
            message: format!("decision hour {decision_hour} outside 0..=23"),
        });
    }
    let window_start = decision_day
        .and_hms_opt(decision_hour, 0, 0)
        .expect("hour validated above");
    let window_end = window_start + chrono::Duration::hours(24);

    let mut in_window: Vec<&CommunicationEvent> = events
        .iter()
        .filter(|e| {
            e.initiator != Initiator::System
                && e.timestamp >= window_start
                && e.timestamp < window_end
        })
        .collect();
    in_window.sort_by_key(|e| e.timestamp);

    match in_window.first() {
        None => Ok(ActionLabel::NoContact),
        Some(first) => {
            if first.prescheduled || first.initiator == Initiator::Lead {
                Ok(ActionLabel::Excluded)
            } else {
                Ok(ActionLabel::Contact)
            }
        }
    }
}

/// Groups events by lead and labels every lead found in the log for one
/// decision window. Returns (lead_id, label) pairs sorted by lead id.
pub fn label_log(
    events: &[CommunicationEvent],
    decision_day: NaiveDate,
    decision_hour: u32,
) -> Result<Vec<(String, ActionLabel)>, DataError> {
    let mut by_lead: BTreeMap<&str, Vec<CommunicationEvent>> = BTreeMap::new();
    for event in events {
        by_lead
            .entry(event.lead_id.as_str())
            .or_default()
            .push(event.clone());
    }
    by_lead
        .into_iter()
        .map(|(lead, lead_events)| {
            label_actions(&lead_events, decision_day, decision_hour)
                .map(|label| (lead.to_string(), label))
        })
        .collect()
}

fn parse_timestamp(raw: &str, row: usize) -> Result<NaiveDateTime, DataError> {
    let raw = raw.trim();
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .map_err(|_| DataError::InvalidValue {
            row,
            message: format!("unparseable timestamp {raw:?} (expected YYYY-MM-DDTHH:MM:SS)"),
        })
}

fn parse_initiator(raw: &str, row: usize) -> Result<Initiator, DataError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "ae" => Ok(Initiator::Ae),
        "lead" => Ok(Initiator::Lead),
        "system" => Ok(Initiator::System),
        other => Err(DataError::InvalidValue {
            row,
            message: format!("unknown initiator {other:?} (expected ae, lead, or system)"),
        }),
    }
}

fn parse_bool(raw: &str, row: usize, column: &str) -> Result<bool, DataError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(DataError::InvalidValue {
            row,
            message: format!("column {column:?} must be boolean, got {other:?}"),
        }),
    }
}

/// Loads an event log CSV with columns
/// `lead_id,timestamp_iso8601,initiator,channel,prescheduled`.
pub fn load_events(path: &Path) -> Result<Vec<CommunicationEvent>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv {
            path: path.display().to_string(),
            source: e,
        })?
        .clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.into()))
    };
    let lead_col = col("lead_id")?;
    let ts_col = col("timestamp_iso8601")?;
    let init_col = col("initiator")?;
    let channel_col = col("channel")?;
    let presched_col = col("prescheduled")?;

    let mut events = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let record = result.map_err(|e| DataError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let row = i + 1;
        events.push(CommunicationEvent {
            lead_id: record.get(lead_col).unwrap_or("").trim().to_string(),
            timestamp: parse_timestamp(record.get(ts_col).unwrap_or(""), row)?,
            initiator: parse_initiator(record.get(init_col).unwrap_or(""), row)?,
            channel: record.get(channel_col).unwrap_or("").trim().to_string(),
            prescheduled: parse_bool(record.get(presched_col).unwrap_or(""), row, "prescheduled")?,
        });
    }
    Ok(events)
}
