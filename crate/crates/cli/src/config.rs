//! Pipeline configuration: one TOML file with a section per stage, every
//! field defaulted, unknown sections and keys rejected, and dotted-path
//! command-line overrides applied before validation.
//!
//! The fully-resolved configuration is echoed into each run directory as
//! `effective_config.toml`, and its bytes are what the manifest's config
//! hash covers.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use uplift_core::data::synthetic::{EffectFunction, LinearLogit, SyntheticSpec};
use uplift_core::forest::TreeParams;
use uplift_core::logistic::LogisticParams;
use uplift_core::ope::PropensitySource;
use uplift_core::trial::{ControlContactModel, TestMethod, TrialConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    /// Outcome horizon in days attached to datasets and trials.
    pub horizon_days: u32,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 7,
            horizon_days: 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate the dataset from the `[synth]` section.
    Synth,
    /// Load the dataset from `csv_path`.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    /// Input CSV path; required when `source = "csv"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,
    /// Episode day the pipeline models (day 0 is the registration day and
    /// is never modeled).
    pub episode_day: u32,
    /// Fraction of the day's rows held out for evaluation.
    pub holdout_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synth,
            csv_path: None,
            episode_day: 1,
            holdout_fraction: 0.25,
        }
    }
}

/// Synthetic-world description; the generation seed is derived from the
/// master seed, not stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_rows: usize,
    pub n_numeric: usize,
    pub n_categorical: usize,
    pub n_categories: usize,
    pub n_days: u32,
    pub baseline: LinearLogit,
    pub effect: EffectFunction,
    pub logging: LinearLogit,
    pub propensity_clip: (f64, f64),
}

impl Default for SynthSection {
    fn default() -> Self {
        // Two-population benchmark world: 60% of rows sit in the
        // positive-effect segment (the split is the standard-normal 40th
        // percentile), logging is a fair coin.
        SynthSection {
            n_rows: 20_000,
            n_numeric: 8,
            n_categorical: 2,
            n_categories: 3,
            n_days: 1,
            baseline: LinearLogit {
                intercept: -2.2,
                weights: vec![0.8, 0.5],
            },
            effect: EffectFunction::TwoSegment {
                feature: 2,
                threshold: -0.2533471031357997,
                below: -0.10,
                above: 0.15,
            },
            logging: LinearLogit {
                intercept: 0.0,
                weights: vec![],
            },
            propensity_clip: (0.01, 0.99),
        }
    }
}

impl SynthSection {
    pub fn to_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_rows: self.n_rows,
            n_numeric: self.n_numeric,
            n_categorical: self.n_categorical,
            n_categories: self.n_categories,
            n_days: self.n_days,
            baseline: self.baseline.clone(),
            effect: self.effect.clone(),
            logging: self.logging.clone(),
            propensity_clip: self.propensity_clip,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    /// Number of top-ranked features kept for modeling.
    pub k_best: usize,
    /// Equal-frequency bins used by the importance filter.
    pub n_bins: usize,
    /// Additive smoothing for per-bin conversion rates.
    pub smoothing: f64,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            k_best: 50,
            n_bins: 10,
            smoothing: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensitySection {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PropensitySection {
    fn default() -> Self {
        let p = LogisticParams::default();
        PropensitySection {
            l2: p.l2,
            max_iter: p.max_iter,
            tol: p.tol,
        }
    }
}

impl PropensitySection {
    pub fn to_params(&self) -> LogisticParams {
        LogisticParams {
            l2: self.l2,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrimSection {
    /// Retained propensity range (closed interval).
    pub min_propensity: f64,
    pub max_propensity: f64,
    /// Which propensities downstream estimators use: the logged/generator
    /// values or the fitted model's estimates.
    pub propensity_source: PropensitySource,
}

impl Default for TrimSection {
    fn default() -> Self {
        TrimSection {
            min_propensity: 0.01,
            max_propensity: 0.99,
            propensity_source: PropensitySource::Logged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Contact exactly when the estimated effect is at least this.
    pub threshold: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection { threshold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Calibration report bin count.
    pub n_bins: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { n_bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpeSection {
    /// Contact-fraction grid resolution of the value curve.
    pub n_grid: usize,
    /// Bootstrap replicates behind every interval.
    pub n_reps: usize,
    /// Confidence level of the intervals.
    pub level: f64,
}

impl Default for OpeSection {
    fn default() -> Self {
        OpeSection {
            n_grid: 50,
            n_reps: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub max_depth: usize,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection { max_depth: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialSection {
    pub assignment_probability: f64,
    pub treatment_compliance: f64,
    pub control_contact: ControlContactModel,
    /// Statistic of the primary arm comparison.
    pub method: TestMethod,
}

impl Default for TrialSection {
    fn default() -> Self {
        TrialSection {
            assignment_probability: 0.5,
            treatment_compliance: 1.0,
            control_contact: ControlContactModel::ConstantRate { rate: 0.3 },
            method: TestMethod::PooledZ,
        }
    }
}

impl TrialSection {
    pub fn to_config(&self, horizon_days: u32, seed: u64) -> TrialConfig {
        TrialConfig {
            assignment_probability: self.assignment_probability,
            treatment_compliance: self.treatment_compliance,
            control_contact_model: self.control_contact.clone(),
            horizon_days,
            seed,
        }
    }
}

/// The full resolved configuration, one section per pipeline stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub features: FeaturesSection,
    pub propensity: PropensitySection,
    pub trim: TrimSection,
    pub train: TreeParams,
    pub policy: PolicySection,
    pub evaluate: EvaluateSection,
    pub ope: OpeSection,
    pub surrogate: SurrogateSection,
    pub trial: TrialSection,
}

fn section<T: DeserializeOwned>(name: &str, value: toml::Value) -> Result<T, CliError> {
    value
        .try_into()
        .map_err(|e| CliError::Config(format!("config section [{name}]: {e}")))
}

impl PipelineConfig {
    /// Builds the resolved configuration from an already-parsed TOML table,
    /// section by section so errors name both the section and the key.
    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let mut cfg = PipelineConfig::default();
        for (key, value) in table {
            match key.as_str() {
                "run" => cfg.run = section("run", value)?,
                "data" => cfg.data = section("data", value)?,
                "synth" => cfg.synth = section("synth", value)?,
                "features" => cfg.features = section("features", value)?,
                "propensity" => cfg.propensity = section("propensity", value)?,
                "trim" => cfg.trim = section("trim", value)?,
                "train" => cfg.train = section("train", value)?,
                "policy" => cfg.policy = section("policy", value)?,
                "evaluate" => cfg.evaluate = section("evaluate", value)?,
                "ope" => cfg.ope = section("ope", value)?,
                "surrogate" => cfg.surrogate = section("surrogate", value)?,
                "trial" => cfg.trial = section("trial", value)?,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown config section [{other}]"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the config file (builtin defaults when absent) and applies
    /// dotted-path overrides.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config '{}': {e}", p.display()))
                })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("config '{}': {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        Self::from_table(table)
    }

    /// Cross-field checks not expressible per section.
    fn validate(&self) -> Result<(), CliError> {
        if self.data.source == DataSource::Csv && self.data.csv_path.is_none() {
            return Err(CliError::Config(
                "config section [data]: source = \"csv\" requires csv_path".into(),
            ));
        }
        if self.data.episode_day == 0 {
            return Err(CliError::Config(
                "config section [data]: episode_day 0 is the registration day; episodes start at 1"
                    .into(),
            ));
        }
        let f = self.data.holdout_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::Config(format!(
                "config section [data]: holdout_fraction must lie strictly between 0 and 1, got {f}"
            )));
        }
        if self.features.k_best == 0 {
            return Err(CliError::Config(
                "config section [features]: k_best must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The canonical serialized form echoed into run directories; its bytes
    /// are the subject of the manifest's config hash.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config always serializes")
    }
}

/// Applies one `section.key=value` override to the raw TOML table. The value
/// is parsed as a TOML literal when possible (numbers, booleans, arrays,
/// inline tables) and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Config(format!(
            "override '{spec}' must look like section.key=value"
        ))
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!(
            "override '{spec}' has an empty path segment"
        )));
    }
    let mut current = table;
    for seg in &segments[..segments.len() - 1] {
        current = current
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Config(format!("override '{path}': '{seg}' is not a table"))
            })?;
    }
    let leaf = segments.last().expect("split never yields zero segments");
    current.insert((*leaf).to_string(), parse_override_value(raw));
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("parsed document defines v"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    }
}
