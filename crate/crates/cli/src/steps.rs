//! The pipeline stages. Each step takes its inputs explicitly, writes its
//! artifacts into the directory it is handed, records those paths in
//! `outputs`, and returns whatever downstream stages need in memory, so the
//! same functions serve both the per-stage subcommands and the end-to-end
//! pipeline.

use std::path::{Path, PathBuf};

use serde::Serialize;

use uplift_core::data::io::{load_dataset, save_dataset, LoadReport};
use uplift_core::data::synthetic::generate;
use uplift_core::data::{Action, Dataset};
use uplift_core::forest::importance::{feature_importance, select_top_k, ImportanceParams};
use uplift_core::forest::{self, UpliftEnsemble};
use uplift_core::logistic::{self, LogisticModel, Target};
use uplift_core::metrics::{
    calibration, qini_coefficient, qini_curve, reference_curve, roc_auc, QiniReference, QiniRow,
};
use uplift_core::ope::{
    ope_curve, policy_value_report, BootstrapParams, OpeCurveParams, PolicyValueReport,
    PropensitySource,
};
use uplift_core::policy::{
    recommend_batch, save_policy, save_recommendations, PolicyDocument, PolicyMetadata,
    RecommendationBatch, ThresholdPolicy,
};
use uplift_core::seed;
use uplift_core::surrogate::{distill_surrogate, SurrogateTree};
use uplift_core::trial::{analyze_counts, simulate_trial, CountsTable, TrialAnalysis, TrialResult};
use uplift_core::trim::{trim_positivity, TrimBounds, TrimReport};

use crate::config::PipelineConfig;
use crate::error::CliError;

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serializing '{}': {e}", path.display())))?;
    body.push('\n');
    std::fs::write(path, body)
        .map_err(|e| CliError::Data(format!("cannot write '{}': {e}", path.display())))?;
    Ok(())
}

/// Generates the synthetic dataset described by `[synth]` and saves it.
pub fn synth_step(
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<Dataset, CliError> {
    let spec = cfg.synth.to_spec(seed::derive(cfg.run.seed, "synth"));
    let dataset = generate(&spec)?;
    let path = dir.join("dataset.csv");
    save_dataset(&dataset, &path)?;
    outputs.push(path);
    Ok(dataset)
}

/// Loads an external CSV, re-saves it in canonical form, and reports what
/// was rejected.
pub fn ingest_step(
    csv_path: &Path,
    horizon_days: u32,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<(Dataset, LoadReport), CliError> {
    let (dataset, report) = load_dataset(csv_path, horizon_days)?;
    let data_path = dir.join("dataset.csv");
    save_dataset(&dataset, &data_path)?;
    outputs.push(data_path);
    let report_path = dir.join("ingest_report.json");
    write_json(&report, &report_path)?;
    outputs.push(report_path);
    Ok((dataset, report))
}

#[derive(Debug, Serialize)]
struct SelectedFeatures<'a> {
    k: usize,
    names: &'a [String],
}

/// Ranks features on the training rows only and keeps the top k.
pub fn select_features_step(
    train: &Dataset,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<Vec<String>, CliError> {
    let params = ImportanceParams {
        n_bins: cfg.features.n_bins,
        smoothing: cfg.features.smoothing,
    };
    let ranking = feature_importance(train, params)?;
    let csv_path = dir.join("feature_importance.csv");
    let mut body = String::from("rank,name,score\n");
    for (i, item) in ranking.iter().enumerate() {
        body.push_str(&format!("{},{},{}\n", i + 1, item.name, item.score));
    }
    std::fs::write(&csv_path, body)
        .map_err(|e| CliError::Data(format!("cannot write '{}': {e}", csv_path.display())))?;
    outputs.push(csv_path);

    let selected = select_top_k(&ranking, cfg.features.k_best);
    let json_path = dir.join("selected_features.json");
    write_json(
        &SelectedFeatures {
            k: selected.len(),
            names: &selected,
        },
        &json_path,
    )?;
    outputs.push(json_path);
    Ok(selected)
}

/// Fits the behavior (logged-action) model on the training rows.
pub fn fit_propensity_step(
    train: &Dataset,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<LogisticModel, CliError> {
    let model = logistic::fit(train, Target::Action, cfg.propensity.to_params())?;
    let path = dir.join("propensity_model.json");
    model.save(&path)?;
    outputs.push(path);
    Ok(model)
}

/// Drops rows whose propensity falls outside the configured support range.
/// With `propensity_source = "estimated"` the behavior model's estimates
/// replace the stored propensities first (and travel with the rows).
pub fn trim_step(
    dataset: &Dataset,
    behavior_model: Option<&LogisticModel>,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<(Dataset, TrimReport), CliError> {
    let working = match cfg.trim.propensity_source {
        PropensitySource::Logged => dataset.clone(),
        PropensitySource::Estimated => {
            let model = behavior_model.ok_or_else(|| {
                CliError::Config(
                    "trim.propensity_source = \"estimated\" requires a fitted behavior model; \
                     run fit-propensity first"
                        .into(),
                )
            })?;
            let estimates = model.predict_proba(dataset)?;
            dataset.with_propensities(&estimates)?
        }
    };
    let bounds = TrimBounds {
        lo: cfg.trim.min_propensity,
        hi: cfg.trim.max_propensity,
    };
    let (trimmed, report) = trim_positivity(&working, bounds)?;
    let data_path = dir.join("trimmed.csv");
    save_dataset(&trimmed, &data_path)?;
    outputs.push(data_path);
    let report_path = dir.join("trim_report.json");
    write_json(&report, &report_path)?;
    outputs.push(report_path);
    Ok((trimmed, report))
}

/// Trains the uplift ensemble and saves it.
pub fn train_step(
    train: &Dataset,
    cfg: &PipelineConfig,
    seed: u64,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<UpliftEnsemble, CliError> {
    let ensemble = forest::fit(train, &cfg.train, seed)?;
    let path = dir.join("ensemble.json");
    ensemble.save(&path)?;
    outputs.push(path);
    Ok(ensemble)
}

#[derive(Debug, Serialize)]
pub struct EvaluationSummary {
    pub n_holdout: usize,
    /// Which ranking served as the attainable optimum.
    pub qini_reference: String,
    pub qini_endpoint: f64,
    pub qini_coefficient: f64,
    /// Same coefficient for an outcome-probability model ranking, the
    /// classical predict-then-contact baseline.
    pub predictive_qini_coefficient: f64,
    /// Holdout ROC AUC of that outcome model (its own task).
    pub predictive_roc_auc: f64,
    pub calibration_bins: usize,
}

/// Scores the holdout, writes the uplift and calibration diagnostics, and
/// contrasts the ensemble's ranking with a pure outcome model's.
pub fn evaluate_step(
    train: &Dataset,
    holdout: &Dataset,
    ensemble: &UpliftEnsemble,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<EvaluationSummary, CliError> {
    let scores = ensemble.predict(holdout)?;
    let rows = QiniRow::from_dataset(holdout, &scores)?;
    let model_curve = qini_curve(&rows)?;
    let curve_path = dir.join("qini_curve.csv");
    model_curve.write_csv(&curve_path)?;
    outputs.push(curve_path);

    let reference = if holdout.rows().iter().all(|r| r.true_cate.is_some()) {
        QiniReference::GroundTruthRanking
    } else {
        QiniReference::OutcomeOptimal
    };
    let optimal = reference_curve(&rows, reference)?;
    let coefficient = qini_coefficient(&model_curve, &optimal)?;

    let report = calibration(&scores, holdout, cfg.evaluate.n_bins)?;
    let calib_path = dir.join("calibration.csv");
    report.write_csv(&calib_path)?;
    outputs.push(calib_path);

    let outcome_model = logistic::fit(train, Target::Outcome, cfg.propensity.to_params())?;
    let outcome_scores = outcome_model.predict_proba(holdout)?;
    let labels: Vec<bool> = holdout.rows().iter().map(|r| r.outcome).collect();
    let auc = roc_auc(&outcome_scores, &labels)?;
    let predictive_rows = QiniRow::from_dataset(holdout, &outcome_scores)?;
    let predictive_curve = qini_curve(&predictive_rows)?;
    let predictive_coefficient = qini_coefficient(&predictive_curve, &optimal)?;

    let summary = EvaluationSummary {
        n_holdout: holdout.len(),
        qini_reference: reference.to_string(),
        qini_endpoint: model_curve.endpoint(),
        qini_coefficient: coefficient,
        predictive_qini_coefficient: predictive_coefficient,
        predictive_roc_auc: auc,
        calibration_bins: cfg.evaluate.n_bins,
    };
    let summary_path = dir.join("evaluation.json");
    write_json(&summary, &summary_path)?;
    outputs.push(summary_path);
    Ok(summary)
}

/// Estimates policy values from the logged data alone: the contact-fraction
/// value curve plus the four-way policy comparison at the configured
/// threshold.
pub fn ope_step(
    holdout: &Dataset,
    ensemble: &UpliftEnsemble,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<PolicyValueReport, CliError> {
    let scores = ensemble.predict(holdout)?;
    let curve_params = OpeCurveParams {
        n_grid: cfg.ope.n_grid,
        bootstrap: BootstrapParams {
            n_reps: cfg.ope.n_reps,
            level: cfg.ope.level,
            seed: seed::derive(cfg.run.seed, "ope-curve"),
        },
    };
    let curves = ope_curve(holdout, &scores, &curve_params)?;
    let curve_path = dir.join("ope_curve.csv");
    curves.write_csv(&curve_path)?;
    outputs.push(curve_path);

    let policy = ThresholdPolicy::new(cfg.policy.threshold)?;
    let actions: Vec<Action> = scores.iter().map(|&s| policy.decide(s)).collect();
    let report = policy_value_report(
        holdout,
        &actions,
        cfg.trim.propensity_source,
        &BootstrapParams {
            n_reps: cfg.ope.n_reps,
            level: cfg.ope.level,
            seed: seed::derive(cfg.run.seed, "ope-policies"),
        },
    )?;
    let report_path = dir.join("policy_value.json");
    write_json(&report, &report_path)?;
    outputs.push(report_path);
    Ok(report)
}

/// Packages the threshold + ensemble as a deployable document and scores the
/// given cohort with it.
pub fn policy_export_step(
    cohort: &Dataset,
    ensemble: &UpliftEnsemble,
    cfg: &PipelineConfig,
    decision_day: Option<u32>,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<RecommendationBatch, CliError> {
    let policy = ThresholdPolicy::new(cfg.policy.threshold)?;
    let batch = recommend_batch(&policy, ensemble, cohort)?;
    // `created` stays empty so re-runs are byte-identical.
    let metadata = PolicyMetadata {
        training_day_range: decision_day.map(|d| (d, d)),
        decision_day,
        created: None,
    };
    let document = PolicyDocument::new(policy, ensemble.clone(), metadata);
    let policy_path = dir.join("policy.json");
    save_policy(&document, &policy_path)?;
    outputs.push(policy_path);
    let rec_path = dir.join("recommendations.csv");
    save_recommendations(&batch.recommendations, &rec_path)?;
    outputs.push(rec_path);
    Ok(batch)
}

/// Distills the policy into a short readable tree.
pub fn distill_step(
    cohort: &Dataset,
    ensemble: &UpliftEnsemble,
    threshold: f64,
    max_depth: usize,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<SurrogateTree, CliError> {
    let policy = ThresholdPolicy::new(threshold)?;
    let tree = distill_surrogate(&policy, ensemble, cohort, max_depth)?;
    let json_path = dir.join("surrogate.json");
    tree.save(&json_path)?;
    outputs.push(json_path);
    let text_path = dir.join("surrogate.txt");
    std::fs::write(&text_path, tree.render_text())
        .map_err(|e| CliError::Data(format!("cannot write '{}': {e}", text_path.display())))?;
    outputs.push(text_path);
    Ok(tree)
}

/// Runs the two-arm experiment on a world with stored potential outcomes and
/// writes both the row-level log and the aggregate counts.
pub fn trial_simulate_step(
    world: &Dataset,
    recommendations: &[Action],
    cfg: &PipelineConfig,
    seed: u64,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<TrialResult, CliError> {
    let trial_config = cfg.trial.to_config(world.horizon_days(), seed);
    let result = simulate_trial(world, recommendations, &trial_config)?;

    let items_path = dir.join("trial_items.csv");
    let mut body = String::from("id,arm,recommendation,executed,outcome\n");
    for item in &result.items {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            item.id,
            item.arm,
            item.recommendation,
            item.executed,
            if item.outcome { 1 } else { 0 }
        ));
    }
    std::fs::write(&items_path, body)
        .map_err(|e| CliError::Data(format!("cannot write '{}': {e}", items_path.display())))?;
    outputs.push(items_path);

    let counts = result.counts();
    let counts_path = dir.join("trial_counts.csv");
    counts.write_csv(&counts_path)?;
    outputs.push(counts_path);
    Ok(result)
}

/// Analyzes a counts table and writes the report.
pub fn trial_analyze_step(
    counts: &CountsTable,
    cfg: &PipelineConfig,
    dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<TrialAnalysis, CliError> {
    let analysis = analyze_counts(counts, cfg.trial.method)?;
    let path = dir.join("trial_analysis.json");
    write_json(&analysis, &path)?;
    outputs.push(path);
    Ok(analysis)
}
