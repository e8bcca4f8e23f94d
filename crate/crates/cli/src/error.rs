//! Error categories mapped onto process exit codes.
//!
//! Every failure is reported as a single line on stderr in the form
//! `error: <category>: <message>` and exits with the category's code:
//! 1 for usage/config problems, 2 for data problems, 3 for numerical or
//! degenerate-estimation problems.

use uplift_core::data::DataError;
use uplift_core::forest::ForestError;
use uplift_core::logistic::ModelError;
use uplift_core::metrics::MetricsError;
use uplift_core::ope::OpeError;
use uplift_core::policy::PolicyError;
use uplift_core::surrogate::SurrogateError;
use uplift_core::trial::TrialError;
use uplift_core::trim::TrimError;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration (exit 1).
    Config(String),
    /// Bad or missing input data (exit 2).
    Data(String),
    /// Estimation is undefined or degenerate on this input (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }

    /// The single stderr line: category, then the message flattened so that
    /// multi-line sources stay machine-parsable.
    pub fn render(&self) -> String {
        let flat = self.message().trim_end().replace('\n', "; ");
        format!("error: {}: {}", self.category(), flat)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.render())
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec(_) | DataError::InvalidFraction(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Degenerate => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ForestError> for CliError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::InvalidParams(_) => CliError::Config(e.to_string()),
            ForestError::DegenerateBootstrap => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrimError> for CliError {
    fn from(e: TrimError) -> Self {
        match e {
            TrimError::InvalidBounds { .. } => CliError::Config(e.to_string()),
            TrimError::MissingPropensity { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidBins { .. } => CliError::Config(e.to_string()),
            MetricsError::DegenerateReference => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<OpeError> for CliError {
    fn from(e: OpeError) -> Self {
        match e {
            OpeError::InvalidLevel { .. } | OpeError::InvalidReps | OpeError::InvalidGrid => {
                CliError::Config(e.to_string())
            }
            OpeError::NoOverlap | OpeError::TooManyDegenerate { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NonFiniteThreshold { .. } => CliError::Config(e.to_string()),
            PolicyError::Forest(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SurrogateError> for CliError {
    fn from(e: SurrogateError) -> Self {
        match e {
            SurrogateError::InvalidDepth => CliError::Config(e.to_string()),
            SurrogateError::Policy(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrialError> for CliError {
    fn from(e: TrialError) -> Self {
        match e {
            TrialError::InvalidProbability { .. }
            | TrialError::InvalidRatio(_)
            | TrialError::InvalidLevel(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
