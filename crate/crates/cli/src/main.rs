//! `uplift` — batch pipeline for causal contact-decision modeling.
//!
//! Every invocation creates one fresh output directory containing the
//! requested artifacts, the fully-resolved configuration, and a run
//! manifest. Artifacts are staged and promoted atomically; failures leave a
//! quarantined `<out>.failed` directory and a single-line error on stderr.

mod config;
mod error;
mod manifest;
mod run;
mod steps;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use uplift_core::data::io::load_dataset;
use uplift_core::data::{Action, Dataset};
use uplift_core::forest::UpliftEnsemble;
use uplift_core::logistic::LogisticModel;
use uplift_core::policy::{load_policy, recommend_batch};
use uplift_core::seed;
use uplift_core::trial::CountsTable;

use config::{DataSource, PipelineConfig};
use error::CliError;
use manifest::{sha256_hex, ManifestBuilder};
use run::RunDir;

#[derive(Parser)]
#[command(
    name = "uplift",
    version,
    about = "Train uplift models, evaluate contact policies offline, and analyze randomized trials."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; builtin defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-path config override, e.g. --set train.n_trees=50 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; must not already exist.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Cap worker threads (results are identical at any setting).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset from the [synth] section.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Load an external decision-log CSV into canonical form.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Input CSV of logged decisions.
        #[arg(long, value_name = "PATH")]
        csv: PathBuf,
    },
    /// Rank features by uplift signal and keep the best k.
    SelectFeatures {
        #[command(flatten)]
        common: CommonArgs,
        /// Training dataset CSV.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Fit the behavior model of the logged contact decision.
    FitPropensity {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Drop rows whose propensity lies outside the supported range.
    Trim {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Behavior model (required when trim.propensity_source = "estimated").
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Train the uplift ensemble.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Score a holdout and report uplift-ranking and calibration quality.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Training cohort (for the predictive-baseline fit).
        #[arg(long, value_name = "PATH")]
        train: PathBuf,
        /// Held-out cohort to score.
        #[arg(long, value_name = "PATH")]
        holdout: PathBuf,
        /// Trained ensemble document.
        #[arg(long, value_name = "PATH")]
        ensemble: PathBuf,
    },
    /// Estimate policy values from logged data (value curve + comparison).
    Ope {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        ensemble: PathBuf,
    },
    /// Package threshold + ensemble as a deployable policy and score a cohort.
    PolicyExport {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        ensemble: PathBuf,
    },
    /// Distill a policy into a short, readable decision tree.
    Distill {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Exported policy document.
        #[arg(long, value_name = "PATH")]
        policy: PathBuf,
    },
    /// Run the two-arm experiment on a world with stored potential outcomes.
    TrialSimulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        policy: PathBuf,
    },
    /// Analyze a trial counts table (no trained model required).
    TrialAnalyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Counts CSV: group,recommendation,n,deliveries,contacts,compliant.
        #[arg(long, value_name = "PATH")]
        counts: PathBuf,
    },
    /// Run every stage end to end from one configuration.
    Pipeline {
        #[command(flatten)]
        common: CommonArgs,
        /// Train per-day models for episode days 1..=D in day-<d>/ subdirs.
        #[arg(long, value_name = "D")]
        days: Option<u32>,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth { common }
            | Command::Ingest { common, .. }
            | Command::SelectFeatures { common, .. }
            | Command::FitPropensity { common, .. }
            | Command::Trim { common, .. }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ope { common, .. }
            | Command::PolicyExport { common, .. }
            | Command::Distill { common, .. }
            | Command::TrialSimulate { common, .. }
            | Command::TrialAnalyze { common, .. }
            | Command::Pipeline { common, .. } => common,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(out) => {
            println!("{}", out.display());
        }
        Err((err, quarantined)) => {
            match quarantined {
                Some(path) => eprintln!(
                    "{}; partial outputs quarantined at '{}'",
                    err.render(),
                    path.display()
                ),
                None => eprintln!("{}", err.render()),
            }
            std::process::exit(err.exit_code());
        }
    }
}

/// Sets up the run directory and manifest, executes the subcommand inside
/// staging, and either commits or quarantines.
fn execute(command: &Command) -> Result<PathBuf, (CliError, Option<PathBuf>)> {
    let common = command.common();
    if let Some(n) = common.threads {
        // A second initialization (only possible in-process) is harmless:
        // results never depend on the pool size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let cfg =
        PipelineConfig::load(common.config.as_deref(), &common.overrides).map_err(|e| (e, None))?;
    let run_dir = RunDir::create(&common.out).map_err(|e| (e, None))?;
    let staging = run_dir.staging().to_path_buf();

    let result = (|| -> Result<(), CliError> {
        let effective = cfg.to_toml_string();
        std::fs::write(staging.join("effective_config.toml"), &effective)
            .map_err(|e| CliError::Data(format!("cannot write effective config: {e}")))?;

        let mut builder = ManifestBuilder::new(
            std::env::args().skip(1).collect(),
            sha256_hex(effective.as_bytes()),
            cfg.run.seed,
            &staging,
        );
        if let Some(path) = &common.config {
            builder.record_input("config", path)?;
        }
        for (label, path) in input_files(command) {
            builder.record_input(label, &path)?;
        }
        run_command(command, &cfg, &staging, &mut builder)?;
        builder.write()
    })();

    match result {
        Ok(()) => run_dir.commit().map_err(|e| (e, None)),
        Err(e) => {
            let quarantined = run_dir.quarantine();
            Err((e, quarantined))
        }
    }
}

/// External files whose hashes belong in the manifest.
fn input_files(command: &Command) -> Vec<(&'static str, PathBuf)> {
    match command {
        Command::Synth { .. } | Command::Pipeline { .. } => vec![],
        Command::Ingest { csv, .. } => vec![("csv", csv.clone())],
        Command::SelectFeatures { data, .. }
        | Command::FitPropensity { data, .. }
        | Command::Train { data, .. } => vec![("data", data.clone())],
        Command::Trim { data, model, .. } => {
            let mut v = vec![("data", data.clone())];
            if let Some(m) = model {
                v.push(("model", m.clone()));
            }
            v
        }
        Command::Evaluate {
            train,
            holdout,
            ensemble,
            ..
        } => vec![
            ("train", train.clone()),
            ("holdout", holdout.clone()),
            ("ensemble", ensemble.clone()),
        ],
        Command::Ope { data, ensemble, .. } | Command::PolicyExport { data, ensemble, .. } => {
            vec![("data", data.clone()), ("ensemble", ensemble.clone())]
        }
        Command::Distill { data, policy, .. } | Command::TrialSimulate { data, policy, .. } => {
            vec![("data", data.clone()), ("policy", policy.clone())]
        }
        Command::TrialAnalyze { counts, .. } => vec![("counts", counts.clone())],
    }
}

fn load_data(path: &Path, cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let (dataset, _) = load_dataset(path, cfg.run.horizon_days)?;
    Ok(dataset)
}

fn run_command(
    command: &Command,
    cfg: &PipelineConfig,
    dir: &Path,
    builder: &mut ManifestBuilder,
) -> Result<(), CliError> {
    let day = cfg.data.episode_day;
    match command {
        Command::Synth { .. } => {
            builder.step("synth", |outputs| steps::synth_step(cfg, dir, outputs))?;
        }
        Command::Ingest { csv, .. } => {
            builder.step("ingest", |outputs| {
                steps::ingest_step(csv, cfg.run.horizon_days, dir, outputs)
            })?;
        }
        Command::SelectFeatures { data, .. } => {
            let dataset = load_data(data, cfg)?;
            builder.step("select-features", |outputs| {
                steps::select_features_step(&dataset, cfg, dir, outputs)
            })?;
        }
        Command::FitPropensity { data, .. } => {
            let dataset = load_data(data, cfg)?;
            builder.step("fit-propensity", |outputs| {
                steps::fit_propensity_step(&dataset, cfg, dir, outputs)
            })?;
        }
        Command::Trim { data, model, .. } => {
            let dataset = load_data(data, cfg)?;
            let behavior = match model {
                Some(path) => Some(LogisticModel::load(path)?),
                None => None,
            };
            builder.step("trim", |outputs| {
                steps::trim_step(&dataset, behavior.as_ref(), cfg, dir, outputs)
            })?;
        }
        Command::Train { data, .. } => {
            let dataset = load_data(data, cfg)?;
            let train_seed = seed::derive_indexed(cfg.run.seed, "train", u64::from(day));
            builder.step("train", |outputs| {
                steps::train_step(&dataset, cfg, train_seed, dir, outputs)
            })?;
        }
        Command::Evaluate {
            train,
            holdout,
            ensemble,
            ..
        } => {
            let train_ds = load_data(train, cfg)?;
            let holdout_ds = load_data(holdout, cfg)?;
            let model = UpliftEnsemble::load(ensemble)?;
            builder.step("evaluate", |outputs| {
                steps::evaluate_step(&train_ds, &holdout_ds, &model, cfg, dir, outputs)
            })?;
        }
        Command::Ope { data, ensemble, .. } => {
            let dataset = load_data(data, cfg)?;
            let model = UpliftEnsemble::load(ensemble)?;
            builder.step("ope", |outputs| {
                steps::ope_step(&dataset, &model, cfg, dir, outputs)
            })?;
        }
        Command::PolicyExport { data, ensemble, .. } => {
            let dataset = load_data(data, cfg)?;
            let model = UpliftEnsemble::load(ensemble)?;
            builder.step("policy-export", |outputs| {
                steps::policy_export_step(&dataset, &model, cfg, Some(day), dir, outputs)
            })?;
        }
        Command::Distill { data, policy, .. } => {
            let dataset = load_data(data, cfg)?;
            let document = load_policy(policy)?;
            builder.step("distill", |outputs| {
                steps::distill_step(
                    &dataset,
                    &document.ensemble,
                    document.threshold,
                    cfg.surrogate.max_depth,
                    dir,
                    outputs,
                )
            })?;
        }
        Command::TrialSimulate { data, policy, .. } => {
            let dataset = load_data(data, cfg)?;
            let document = load_policy(policy)?;
            let batch = recommend_batch(&document.policy(), &document.ensemble, &dataset)?;
            let actions: Vec<Action> = batch
                .recommendations
                .iter()
                .map(|r| r.recommendation)
                .collect();
            let trial_seed = seed::derive_indexed(cfg.run.seed, "trial", u64::from(day));
            builder.step("trial-simulate", |outputs| {
                steps::trial_simulate_step(&dataset, &actions, cfg, trial_seed, dir, outputs)
            })?;
        }
        Command::TrialAnalyze { counts, .. } => {
            let table = CountsTable::read_csv(counts)?;
            builder.step("trial-analyze", |outputs| {
                steps::trial_analyze_step(&table, cfg, dir, outputs)
            })?;
        }
        Command::Pipeline { days, .. } => {
            run_pipeline(cfg, *days, dir, builder)?;
        }
    }
    Ok(())
}

/// The full chain for one day: split, select features, fit the behavior
/// model, trim the training rows, train, evaluate, estimate policy values,
/// export the policy, distill it, and simulate + analyze the trial on the
/// holdout cohort.
fn pipeline_day(
    slice: &Dataset,
    day: u32,
    cfg: &PipelineConfig,
    dir: &Path,
    builder: &mut ManifestBuilder,
    step_prefix: &str,
) -> Result<(), CliError> {
    let master = cfg.run.seed;
    let name = |stage: &str| format!("{step_prefix}{stage}");

    let (train_raw, holdout_raw) =
        slice.split_holdout(uplift_core::data::HoldoutSplit::Fraction {
            fraction: cfg.data.holdout_fraction,
            seed: seed::derive_indexed(master, "holdout", u64::from(day)),
        })?;

    let selected = builder.step(&name("select-features"), |outputs| {
        steps::select_features_step(&train_raw, cfg, dir, outputs)
    })?;
    let train_sel = train_raw.select_features(&selected)?;
    let holdout_sel = holdout_raw.select_features(&selected)?;

    let behavior = builder.step(&name("fit-propensity"), |outputs| {
        steps::fit_propensity_step(&train_sel, cfg, dir, outputs)
    })?;

    let (train_trimmed, _) = builder.step(&name("trim"), |outputs| {
        steps::trim_step(&train_sel, Some(&behavior), cfg, dir, outputs)
    })?;

    // The holdout cohort is persisted so evaluate/ope runs are reproducible
    // from artifacts alone.
    let holdout_path = dir.join("holdout.csv");
    uplift_core::data::io::save_dataset(&holdout_sel, &holdout_path)?;

    let ensemble = builder.step(&name("train"), |outputs| {
        steps::train_step(
            &train_trimmed,
            cfg,
            seed::derive_indexed(master, "train", u64::from(day)),
            dir,
            outputs,
        )
    })?;

    builder.step(&name("evaluate"), |outputs| {
        outputs.push(holdout_path.clone());
        steps::evaluate_step(&train_trimmed, &holdout_sel, &ensemble, cfg, dir, outputs)
    })?;

    builder.step(&name("ope"), |outputs| {
        steps::ope_step(&holdout_sel, &ensemble, cfg, dir, outputs)
    })?;

    let batch = builder.step(&name("policy-export"), |outputs| {
        steps::policy_export_step(&holdout_sel, &ensemble, cfg, Some(day), dir, outputs)
    })?;

    builder.step(&name("distill"), |outputs| {
        steps::distill_step(
            &train_trimmed,
            &ensemble,
            cfg.policy.threshold,
            cfg.surrogate.max_depth,
            dir,
            outputs,
        )
    })?;

    let actions: Vec<Action> = batch
        .recommendations
        .iter()
        .map(|r| r.recommendation)
        .collect();
    let result = builder.step(&name("trial-simulate"), |outputs| {
        steps::trial_simulate_step(
            &holdout_sel,
            &actions,
            cfg,
            seed::derive_indexed(master, "trial", u64::from(day)),
            dir,
            outputs,
        )
    })?;

    builder.step(&name("trial-analyze"), |outputs| {
        steps::trial_analyze_step(&result.counts(), cfg, dir, outputs)
    })?;
    Ok(())
}

fn run_pipeline(
    cfg: &PipelineConfig,
    days: Option<u32>,
    dir: &Path,
    builder: &mut ManifestBuilder,
) -> Result<(), CliError> {
    let full = match cfg.data.source {
        DataSource::Synth => {
            builder.step("synth", |outputs| steps::synth_step(cfg, dir, outputs))?
        }
        DataSource::Csv => {
            let path = cfg
                .data
                .csv_path
                .as_ref()
                .expect("validated: csv source has a path")
                .clone();
            builder
                .step("ingest", |outputs| {
                    steps::ingest_step(Path::new(&path), cfg.run.horizon_days, dir, outputs)
                })?
                .0
        }
    };

    match days {
        None => {
            let day = cfg.data.episode_day;
            let slice = full.slice_episode(day)?;
            if slice.is_empty() {
                return Err(CliError::Data(format!("no rows for episode day {day}")));
            }
            pipeline_day(&slice, day, cfg, dir, builder, "")
        }
        Some(0) => Err(CliError::Config("--days must be at least 1".into())),
        Some(d_max) => {
            for day in 1..=d_max {
                let slice = full.slice_episode(day)?;
                if slice.is_empty() {
                    return Err(CliError::Data(format!("no rows for episode day {day}")));
                }
                let day_dir = dir.join(format!("day-{day}"));
                std::fs::create_dir_all(&day_dir).map_err(|e| {
                    CliError::Data(format!("cannot create '{}': {e}", day_dir.display()))
                })?;
                pipeline_day(&slice, day, cfg, &day_dir, builder, &format!("day-{day}/"))?;
            }
            Ok(())
        }
    }
}
