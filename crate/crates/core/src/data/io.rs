//! Dataset CSV input/output.
//!
//! File layout: `id,day,action,outcome[,propensity][,true_cate][,y0,y1]`
//! followed by feature columns prefixed `n_` (numeric) or `c_` (categorical).
//! Action and outcome are 0/1.
//!
//! On load, categorical columns are one-hot expanded to `<name>=<category>`
//! columns (categories sorted, in place of the original column), and numeric
//! columns containing empty cells get a sentinel value plus a companion
//! `<name>__missing` indicator column. Saved files therefore contain only
//! numeric feature columns, and loading a saved file reproduces the dataset
//! exactly.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use super::{Action, DataError, Dataset, FeatureSchema, ObservationRow, MISSING_NUMERIC_SENTINEL};

/// Per-file summary of what was admitted and what was dropped.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LoadReport {
    pub n_loaded: usize,
    pub n_rejected: usize,
    /// (1-based data-row number, reason) for every rejected row.
    pub rejections: Vec<(usize, String)>,
}

#[derive(Clone, Copy)]
enum FeatureKind {
    Numeric,
    Categorical,
}

struct RawColumn {
    name: String,
    kind: FeatureKind,
    file_index: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> DataError {
    DataError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<bool, DataError> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(DataError::InvalidValue {
            row,
            message: format!("column {column:?} must be 0 or 1, got {other:?}"),
        }),
    }
}

fn parse_f64(raw: &str, row: usize, column: &str) -> Result<f64, DataError> {
    let value: f64 = raw.trim().parse().map_err(|_| DataError::InvalidValue {
        row,
        message: format!("column {column:?} is not a number: {raw:?}"),
    })?;
    if !value.is_finite() {
        return Err(DataError::InvalidValue {
            row,
            message: format!("column {column:?} is not finite: {raw:?}"),
        });
    }
    Ok(value)
}

/// Loads a decision-observation CSV.
///
/// Day-0 rows (registration day) are rejected and counted in the report;
/// structural problems — missing or unknown columns, duplicate ids, non-binary
/// action/outcome, unparseable numbers — are errors naming the offending
/// row or column.
pub fn load_dataset(path: &Path, horizon_days: u32) -> Result<(Dataset, LoadReport), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();

    let mut seen = std::collections::HashSet::new();
    for h in headers.iter() {
        if !seen.insert(h.to_string()) {
            return Err(DataError::DuplicateColumn(h.to_string()));
        }
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.into()));

    let id_col = required("id")?;
    let day_col = required("day")?;
    let action_col = required("action")?;
    let outcome_col = required("outcome")?;
    let propensity_col = find("propensity");
    let true_cate_col = find("true_cate");
    let y0_col = find("y0");
    let y1_col = find("y1");
    match (y0_col, y1_col) {
        (Some(_), None) => return Err(DataError::MissingColumn("y1".into())),
        (None, Some(_)) => return Err(DataError::MissingColumn("y0".into())),
        _ => {}
    }

    let reserved = [
        Some(id_col),
        Some(day_col),
        Some(action_col),
        Some(outcome_col),
        propensity_col,
        true_cate_col,
        y0_col,
        y1_col,
    ];
    let mut raw_columns = Vec::new();
    for (idx, header) in headers.iter().enumerate() {
        if reserved.contains(&Some(idx)) {
            continue;
        }
        if let Some(name) = header.strip_prefix("n_") {
            raw_columns.push(RawColumn {
                name: name.to_string(),
                kind: FeatureKind::Numeric,
                file_index: idx,
            });
        } else if let Some(name) = header.strip_prefix("c_") {
            raw_columns.push(RawColumn {
                name: name.to_string(),
                kind: FeatureKind::Categorical,
                file_index: idx,
            });
        } else {
            return Err(DataError::UnrecognizedColumn(header.to_string()));
        }
    }

    // First pass: pull every record into memory so categorical levels and
    // missingness are known before the schema is fixed.
    let mut records = Vec::new();
    for result in reader.records() {
        records.push(result.map_err(|e| csv_err(path, e))?);
    }

    let mut numeric_raw: Vec<Vec<Option<f64>>> = Vec::new();
    let mut categorical_raw: Vec<Vec<String>> = Vec::new();
    for col in &raw_columns {
        match col.kind {
            FeatureKind::Numeric => {
                let mut values = Vec::with_capacity(records.len());
                for (i, record) in records.iter().enumerate() {
                    let raw = record.get(col.file_index).unwrap_or("").trim();
                    if raw.is_empty() {
                        values.push(None);
                    } else {
                        values.push(Some(parse_f64(raw, i + 1, &format!("n_{}", col.name))?));
                    }
                }
                numeric_raw.push(values);
                categorical_raw.push(Vec::new());
            }
            FeatureKind::Categorical => {
                let values = records
                    .iter()
                    .map(|r| r.get(col.file_index).unwrap_or("").trim().to_string())
                    .collect();
                categorical_raw.push(values);
                numeric_raw.push(Vec::new());
            }
        }
    }

    // Expanded schema: numeric columns keep their position (indicator column
    // immediately after, when needed); categorical columns expand in place to
    // one column per sorted category.
    let mut names = Vec::new();
    let mut layout = Vec::new(); // per raw column: expanded column descriptors
    for (c, col) in raw_columns.iter().enumerate() {
        match col.kind {
            FeatureKind::Numeric => {
                let has_missing = numeric_raw[c].iter().any(|v| v.is_none());
                names.push(col.name.clone());
                if has_missing {
                    names.push(format!("{}__missing", col.name));
                }
                layout.push((FeatureKind::Numeric, has_missing, Vec::new()));
            }
            FeatureKind::Categorical => {
                let categories: BTreeSet<String> = categorical_raw[c].iter().cloned().collect();
                let categories: Vec<String> = categories.into_iter().collect();
                for cat in &categories {
                    names.push(format!("{}={}", col.name, cat));
                }
                layout.push((FeatureKind::Categorical, false, categories));
            }
        }
    }
    let schema = FeatureSchema::new(names)?;

    let mut rows = Vec::with_capacity(records.len());
    let mut rejections = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let row_number = i + 1;
        let day: u32 = record
            .get(day_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| DataError::InvalidValue {
                row: row_number,
                message: format!(
                    "column \"day\" is not a non-negative integer: {:?}",
                    record.get(day_col).unwrap_or("")
                ),
            })?;
        if day == 0 {
            rejections.push((row_number, "day 0 (registration day) excluded".into()));
            continue;
        }

        let mut features = Vec::with_capacity(schema.len());
        for (c, (kind, has_missing, categories)) in layout.iter().enumerate() {
            match kind {
                FeatureKind::Numeric => match numeric_raw[c][i] {
                    Some(v) => {
                        features.push(v);
                        if *has_missing {
                            features.push(0.0);
                        }
                    }
                    None => {
                        features.push(MISSING_NUMERIC_SENTINEL);
                        features.push(1.0);
                    }
                },
                FeatureKind::Categorical => {
                    let value = &categorical_raw[c][i];
                    for cat in categories {
                        features.push(if cat == value { 1.0 } else { 0.0 });
                    }
                }
            }
        }

        let optional_f64 = |col: Option<usize>, name: &str| -> Result<Option<f64>, DataError> {
            match col {
                Some(idx) => {
                    let raw = record.get(idx).unwrap_or("").trim();
                    if raw.is_empty() {
                        Ok(None)
                    } else {
                        Ok(Some(parse_f64(raw, row_number, name)?))
                    }
                }
                None => Ok(None),
            }
        };
        let optional_binary = |col: Option<usize>, name: &str| -> Result<Option<bool>, DataError> {
            match col {
                Some(idx) => {
                    let raw = record.get(idx).unwrap_or("").trim();
                    if raw.is_empty() {
                        Ok(None)
                    } else {
                        Ok(Some(parse_binary(raw, row_number, name)?))
                    }
                }
                None => Ok(None),
            }
        };

        let potential_outcomes = match (
            optional_binary(y0_col, "y0")?,
            optional_binary(y1_col, "y1")?,
        ) {
            (Some(y0), Some(y1)) => Some((y0, y1)),
            (None, None) => None,
            _ => {
                return Err(DataError::InvalidValue {
                    row: row_number,
                    message: "y0 and y1 must both be present or both empty".into(),
                })
            }
        };

        rows.push(ObservationRow {
            id: record.get(id_col).unwrap_or("").trim().to_string(),
            day_index: day,
            features,
            action: if parse_binary(record.get(action_col).unwrap_or(""), row_number, "action")? {
                Action::Contact
            } else {
                Action::NoContact
            },
            outcome: parse_binary(record.get(outcome_col).unwrap_or(""), row_number, "outcome")?,
            propensity: optional_f64(propensity_col, "propensity")?,
            true_cate: optional_f64(true_cate_col, "true_cate")?,
            potential_outcomes,
        });
    }

    let report = LoadReport {
        n_loaded: rows.len(),
        n_rejected: rejections.len(),
        rejections,
    };
    let dataset = Dataset::new(schema, rows, horizon_days)?;
    Ok((dataset, report))
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that parses back to the same f64, so a
    // save/load cycle is lossless and output bytes are deterministic.
    format!("{v}")
}

/// Writes a dataset as CSV. All feature columns are written with the `n_`
/// prefix (expansion already happened at load or generation time), so the
/// file loads back to an identical dataset.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));

    let has_propensity = dataset.rows().iter().any(|r| r.propensity.is_some());
    let has_true_cate = dataset.rows().iter().any(|r| r.true_cate.is_some());
    let has_potentials = dataset
        .rows()
        .iter()
        .any(|r| r.potential_outcomes.is_some());

    let mut header = vec![
        "id".to_string(),
        "day".into(),
        "action".into(),
        "outcome".into(),
    ];
    if has_propensity {
        header.push("propensity".into());
    }
    if has_true_cate {
        header.push("true_cate".into());
    }
    if has_potentials {
        header.push("y0".into());
        header.push("y1".into());
    }
    for name in dataset.schema().names() {
        header.push(format!("n_{name}"));
    }
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;

    for row in dataset.rows() {
        let mut fields = vec![
            row.id.clone(),
            row.day_index.to_string(),
            row.action.code().to_string(),
            (row.outcome as u8).to_string(),
        ];
        if has_propensity {
            fields.push(row.propensity.map(fmt_f64).unwrap_or_default());
        }
        if has_true_cate {
            fields.push(row.true_cate.map(fmt_f64).unwrap_or_default());
        }
        if has_potentials {
            match row.potential_outcomes {
                Some((y0, y1)) => {
                    fields.push((y0 as u8).to_string());
                    fields.push((y1 as u8).to_string());
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        for &v in &row.features {
            fields.push(fmt_f64(v));
        }
        writer.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    writer
        .into_inner()
        .map_err(|e| io_err(path, e.into_error()))?
        .flush()
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> temppath::TempCsv {
        temppath::TempCsv::new(contents)
    }

    mod temppath {
        use std::path::{Path, PathBuf};

        pub struct TempCsv(PathBuf);

        impl TempCsv {
            pub fn new(contents: &str) -> Self {
                let path = std::env::temp_dir().join(format!(
                    "uplift-core-test-{}-{}.csv",
                    std::process::id(),
                    crate::seed::derive(0xC5, contents)
                ));
                std::fs::write(&path, contents).unwrap();
                TempCsv(path)
            }

            pub fn path(&self) -> &Path {
                &self.0
            }
        }

        impl Drop for TempCsv {
            fn drop(&mut self) {
                let _ = std::fs::remove_file(&self.0);
            }
        }
    }

    #[test]
    fn loads_and_expands_categoricals_in_sorted_order() {
        let file = write_temp(
            "id,day,action,outcome,n_age,c_channel\n\
             a,1,1,0,10.5,web\n\
             b,2,0,1,20.25,phone\n\
             c,1,1,1,30.0,web\n",
        );
        let (ds, report) = load_dataset(file.path(), 90).unwrap();
        assert_eq!(report.n_loaded, 3);
        assert_eq!(report.n_rejected, 0);
        assert_eq!(ds.schema().names(), ["age", "channel=phone", "channel=web"]);
        assert_eq!(ds.rows()[0].features, vec![10.5, 0.0, 1.0]);
        assert_eq!(ds.rows()[1].features, vec![20.25, 1.0, 0.0]);
        assert_eq!(ds.rows()[1].action, Action::NoContact);
        assert!(ds.rows()[1].outcome);
    }

    #[test]
    fn missing_numeric_gets_sentinel_and_indicator() {
        let file = write_temp(
            "id,day,action,outcome,n_age\n\
             a,1,1,0,\n\
             b,1,0,1,42.0\n",
        );
        let (ds, _) = load_dataset(file.path(), 90).unwrap();
        assert_eq!(ds.schema().names(), ["age", "age__missing"]);
        assert_eq!(ds.rows()[0].features, vec![MISSING_NUMERIC_SENTINEL, 1.0]);
        assert_eq!(ds.rows()[1].features, vec![42.0, 0.0]);
    }

    #[test]
    fn day_zero_rows_are_rejected_and_counted() {
        let file = write_temp(
            "id,day,action,outcome,n_x\n\
             a,0,1,0,1.0\n\
             b,1,0,1,2.0\n\
             c,0,1,1,3.0\n",
        );
        let (ds, report) = load_dataset(file.path(), 90).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.n_rejected, 2);
        assert_eq!(report.rejections[0].0, 1);
        assert_eq!(report.rejections[1].0, 3);
    }

    #[test]
    fn non_binary_action_is_an_error_citing_the_row() {
        let file = write_temp(
            "id,day,action,outcome,n_x\n\
             a,1,1,0,1.0\n\
             b,1,2,0,2.0\n",
        );
        let err = load_dataset(file.path(), 90).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("row 2"), "got {message:?}");
        assert!(message.contains("action"), "got {message:?}");
    }

    #[test]
    fn missing_required_column_is_an_error_naming_it() {
        let file = write_temp("id,day,action,n_x\na,1,1,1.0\n");
        let err = load_dataset(file.path(), 90).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "outcome"));
    }

    #[test]
    fn duplicate_ids_are_an_error() {
        let file = write_temp(
            "id,day,action,outcome,n_x\n\
             a,1,1,0,1.0\n\
             a,2,0,1,2.0\n",
        );
        assert!(matches!(
            load_dataset(file.path(), 90),
            Err(DataError::DuplicateId(_))
        ));
    }

    #[test]
    fn unprefixed_column_is_rejected() {
        let file = write_temp("id,day,action,outcome,age\na,1,1,0,1.0\n");
        assert!(matches!(
            load_dataset(file.path(), 90),
            Err(DataError::UnrecognizedColumn(ref c)) if c == "age"
        ));
    }

    #[test]
    fn save_then_load_round_trips_exactly() {
        let file = write_temp(
            "id,day,action,outcome,propensity,true_cate,y0,y1,n_age,c_channel\n\
             a,1,1,0,0.5,0.125,1,0,10.5,web\n\
             b,2,0,1,0.25,-0.0625,1,0,0.1,phone\n\
             c,3,1,1,0.75,0.0,0,1,-3.5,web\n",
        );
        let (original, _) = load_dataset(file.path(), 90).unwrap();
        let saved =
            std::env::temp_dir().join(format!("uplift-core-roundtrip-{}.csv", std::process::id()));
        save_dataset(&original, &saved).unwrap();
        let (reloaded, report) = load_dataset(&saved, 90).unwrap();
        std::fs::remove_file(&saved).unwrap();
        assert_eq!(report.n_rejected, 0);
        assert_eq!(original, reloaded);
    }

    #[test]
    fn outcome_must_match_potential_of_logged_action() {
        let file = write_temp(
            "id,day,action,outcome,y0,y1,n_x\n\
             a,1,1,0,0,1,1.0\n",
        );
        let err = load_dataset(file.path(), 90).unwrap_err();
        assert!(err.to_string().contains("potential outcome"));
    }
}
