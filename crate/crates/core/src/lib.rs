//! Causal decision-optimization toolkit for "contact / don't contact" policies.
//!
//! The library learns per-individual treatment effects (CATE) from logged
//! observational data with uplift random-forest ensembles, converts the
//! estimates into threshold policies, evaluates those policies offline via
//! self-normalized importance sampling, and analyzes randomized validation
//! experiments. A built-in synthetic world with known potential outcomes
//! serves as the ground-truth oracle for every estimator.
//!
//! Module map:
//! - [`data`]: dataset schema, CSV ingestion, event labeling, episode
//!   slicing, holdout splits, and the synthetic-world generator
//! - [`logistic`] / [`trim`]: regularized logistic regression (propensity
//!   scores and predictive baselines) and positivity trimming
//! - [`forest`]: uplift feature selection, divergence-split uplift trees,
//!   bootstrap forests, and the averaged ensemble CATE estimator
//! - [`policy`] / [`surrogate`]: threshold contact policies and explanatory
//!   surrogate decision trees
//! - [`metrics`]: Qini curves and coefficients, CATE calibration, ROC AUC
//! - [`ope`]: SNIPS off-policy estimates, bootstrap CIs, and value-vs-contact
//!   fraction curves
//! - [`trial`]: randomized-trial simulation, SRM checks, proportion tests,
//!   and the subgroup analysis table

pub mod data;
pub mod forest;
pub mod logistic;
pub mod metrics;
pub mod ope;
pub mod policy;
pub mod seed;
pub mod surrogate;
pub mod trial;
pub mod trim;

pub use data::{Action, Dataset, FeatureSchema, ObservationRow};
pub use forest::{TreeParams, UpliftEnsemble};
pub use policy::ThresholdPolicy;
