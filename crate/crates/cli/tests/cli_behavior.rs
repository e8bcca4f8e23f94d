//! Behavioral contract of the binary: exit codes, single-line errors,
//! quarantine of failed runs, override plumbing, and end-to-end composition
//! of the per-stage subcommands through their file artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_uplift")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("uplift-cli-{tag}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn stderr_line(output: &Output) -> String {
    let text = String::from_utf8_lossy(&output.stderr).into_owned();
    let trimmed = text.trim_end();
    assert!(
        !trimmed.contains('\n'),
        "stderr must be a single line, got: {text:?}"
    );
    trimmed.to_string()
}

#[test]
fn unknown_config_key_exits_1_naming_key_and_section() {
    let base = scratch("unknown-key");
    let out = base.join("run");
    let result = run(&[
        "synth",
        "--set",
        "ope.n_repz=10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    let line = stderr_line(&result);
    assert!(line.starts_with("error: config:"), "{line}");
    assert!(line.contains("[ope]"), "{line}");
    assert!(line.contains("n_repz"), "{line}");
    assert!(!out.exists(), "no output directory on config failure");
    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn unknown_config_section_exits_1() {
    let base = scratch("unknown-section");
    std::fs::write(base.join("bad.toml"), "[plotting]\nstyle = \"dark\"\n").unwrap();
    let result = run(&[
        "synth",
        "--config",
        base.join("bad.toml").to_str().unwrap(),
        "--out",
        base.join("run").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    assert!(stderr_line(&result).contains("[plotting]"));
    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn missing_input_exits_2_and_quarantines() {
    let base = scratch("missing-input");
    let out = base.join("run");
    let result = run(&[
        "train",
        "--data",
        base.join("absent.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let line = stderr_line(&result);
    assert!(line.starts_with("error: data:"), "{line}");
    assert!(line.contains("quarantined"), "{line}");
    let failed = base.join("run.failed");
    assert!(failed.is_dir(), "partial outputs moved aside");
    assert!(failed.join("effective_config.toml").exists());
    assert!(!out.exists());
    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn existing_output_directory_exits_1() {
    let base = scratch("out-exists");
    let out = base.join("run");
    std::fs::create_dir_all(&out).unwrap();
    let result = run(&["synth", "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    assert!(stderr_line(&result).contains("already exists"));
    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn set_overrides_are_reflected_in_the_effective_config() {
    let base = scratch("override");
    let out = base.join("run");
    let result = run(&[
        "synth",
        "--set",
        "synth.n_rows=123",
        "--set",
        "run.seed=99",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0), "{result:?}");
    let effective = std::fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(effective.contains("n_rows = 123"), "{effective}");
    assert!(effective.contains("seed = 99"), "{effective}");
    // The dataset honors the override: header plus 123 rows.
    let data = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 124);
    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn degenerate_estimation_exits_3() {
    let base = scratch("degenerate");
    // A healthy world to train on.
    let synth_out = base.join("synth");
    let fast = [
        "--set",
        "synth.n_rows=800",
        "--set",
        "synth.n_numeric=4",
        "--set",
        "train.n_forests=2",
        "--set",
        "train.n_trees=3",
        "--set",
        "train.min_leaf_per_arm=5",
        "--set",
        "train.max_depth=3",
    ];
    let mut args = vec!["synth"];
    args.extend_from_slice(&fast);
    args.extend_from_slice(&["--out", synth_out.to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(0));

    let train_out = base.join("train");
    let synth_csv = synth_out.join("dataset.csv");
    let mut args = vec!["train", "--data", synth_csv.to_str().unwrap()];
    args.extend_from_slice(&fast);
    args.extend_from_slice(&["--out", train_out.to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(0));

    // Rewrite the log so every row was contacted (keeping the outcome
    // consistent with the contacted potential outcome): the never-contact
    // comparison policy then matches no logged row and the estimator is
    // degenerate.
    let original = std::fs::read_to_string(synth_out.join("dataset.csv")).unwrap();
    let mut lines = original.lines();
    let header = lines.next().unwrap().to_string();
    let columns: Vec<&str> = header.split(',').collect();
    let action_col = columns.iter().position(|c| *c == "action").unwrap();
    let outcome_col = columns.iter().position(|c| *c == "outcome").unwrap();
    let y1_col = columns.iter().position(|c| *c == "y1").unwrap();
    let mut crafted = header.clone();
    crafted.push('\n');
    for line in lines {
        let mut cells: Vec<&str> = line.split(',').collect();
        cells[action_col] = "1";
        cells[outcome_col] = cells[y1_col];
        crafted.push_str(&cells.join(","));
        crafted.push('\n');
    }
    let crafted_path = base.join("all_contact.csv");
    std::fs::write(&crafted_path, crafted).unwrap();

    let ope_out = base.join("ope");
    let result = run(&[
        "ope",
        "--data",
        crafted_path.to_str().unwrap(),
        "--ensemble",
        train_out.join("ensemble.json").to_str().unwrap(),
        "--set",
        "ope.n_reps=50",
        "--set",
        "ope.n_grid=4",
        "--out",
        ope_out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3), "{result:?}");
    assert!(stderr_line(&result).starts_with("error: numeric:"));
    std::fs::remove_dir_all(&base).unwrap();
}

fn concat<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(tail);
    v
}

/// Runs one subcommand, asserting success, and returns its output directory.
fn stage(base: &Path, name: &str, args: &[&str]) -> PathBuf {
    let out = base.join(name);
    let mut full: Vec<&str> = args.to_vec();
    let out_str = out.to_str().unwrap().to_string();
    full.extend_from_slice(&["--out", &out_str]);
    let result = Command::new(bin()).args(&full).output().unwrap();
    assert_eq!(
        result.status.code(),
        Some(0),
        "stage {name} failed: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    out
}

#[test]
fn subcommands_compose_through_their_artifacts() {
    let base = scratch("compose");
    let fast = [
        "--set",
        "synth.n_rows=2000",
        "--set",
        "synth.n_numeric=4",
        "--set",
        "features.k_best=6",
        "--set",
        "train.n_forests=3",
        "--set",
        "train.n_trees=5",
        "--set",
        "train.min_leaf_per_arm=5",
        "--set",
        "train.max_depth=4",
        "--set",
        "ope.n_reps=50",
        "--set",
        "ope.n_grid=5",
    ];

    // Two distinct cohorts from two seeds: one to fit on, one to act on.
    let cohort_a = stage(&base, "a", &concat(&["synth"], &fast));
    let mut b_args = concat(&["synth"], &fast);
    b_args.extend_from_slice(&["--set", "run.seed=8"]);
    let cohort_b = stage(&base, "b", &b_args);
    let a_csv = cohort_a.join("dataset.csv");
    let b_csv = cohort_b.join("dataset.csv");

    let ingest = stage(
        &base,
        "ingest",
        &concat(&["ingest", "--csv", a_csv.to_str().unwrap()], &fast),
    );
    // Canonical re-save of a canonical file is a fixed point.
    assert_eq!(
        std::fs::read(&a_csv).unwrap(),
        std::fs::read(ingest.join("dataset.csv")).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ingest.join("ingest_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_loaded"], 2000);
    assert_eq!(report["n_rejected"], 0);

    let features = stage(
        &base,
        "features",
        &concat(
            &["select-features", "--data", a_csv.to_str().unwrap()],
            &fast,
        ),
    );
    let selected: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(features.join("selected_features.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(selected["k"], 6);

    let propensity = stage(
        &base,
        "propensity",
        &concat(
            &["fit-propensity", "--data", a_csv.to_str().unwrap()],
            &fast,
        ),
    );
    assert!(propensity.join("propensity_model.json").exists());

    let trim = stage(
        &base,
        "trim",
        &concat(&["trim", "--data", a_csv.to_str().unwrap()], &fast),
    );
    let trimmed_csv = trim.join("trimmed.csv");
    assert!(trimmed_csv.exists());

    let train = stage(
        &base,
        "train",
        &concat(&["train", "--data", trimmed_csv.to_str().unwrap()], &fast),
    );
    let ensemble = train.join("ensemble.json");

    let evaluate = stage(
        &base,
        "evaluate",
        &concat(
            &[
                "evaluate",
                "--train",
                trimmed_csv.to_str().unwrap(),
                "--holdout",
                b_csv.to_str().unwrap(),
                "--ensemble",
                ensemble.to_str().unwrap(),
            ],
            &fast,
        ),
    );
    let evaluation: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(evaluate.join("evaluation.json")).unwrap())
            .unwrap();
    assert_eq!(evaluation["n_holdout"], 2000);
    assert_eq!(evaluation["qini_reference"], "ground_truth_ranking");

    let ope = stage(
        &base,
        "ope",
        &concat(
            &[
                "ope",
                "--data",
                b_csv.to_str().unwrap(),
                "--ensemble",
                ensemble.to_str().unwrap(),
            ],
            &fast,
        ),
    );
    let curve = std::fs::read_to_string(ope.join("ope_curve.csv")).unwrap();
    assert!(curve.starts_with("fraction,value,ci_low,ci_high,ess,ordering"));
    // 2 orderings x (n_grid + 1) points plus the header.
    assert_eq!(curve.lines().count(), 1 + 2 * 6);

    let export = stage(
        &base,
        "export",
        &concat(
            &[
                "policy-export",
                "--data",
                b_csv.to_str().unwrap(),
                "--ensemble",
                ensemble.to_str().unwrap(),
            ],
            &fast,
        ),
    );
    let policy = export.join("policy.json");
    let recs = std::fs::read_to_string(export.join("recommendations.csv")).unwrap();
    assert_eq!(recs.lines().count(), 1 + 2000);

    let distill = stage(
        &base,
        "distill",
        &concat(
            &[
                "distill",
                "--data",
                b_csv.to_str().unwrap(),
                "--policy",
                policy.to_str().unwrap(),
            ],
            &fast,
        ),
    );
    let rendered = std::fs::read_to_string(distill.join("surrogate.txt")).unwrap();
    assert!(rendered.contains("contact"), "{rendered}");

    let simulate = stage(
        &base,
        "simulate",
        &concat(
            &[
                "trial-simulate",
                "--data",
                b_csv.to_str().unwrap(),
                "--policy",
                policy.to_str().unwrap(),
            ],
            &fast,
        ),
    );
    let items = std::fs::read_to_string(simulate.join("trial_items.csv")).unwrap();
    assert_eq!(items.lines().count(), 1 + 2000);
    let counts_csv = simulate.join("trial_counts.csv");

    let analyze = stage(
        &base,
        "analyze",
        &concat(
            &["trial-analyze", "--counts", counts_csv.to_str().unwrap()],
            &fast,
        ),
    );
    let analysis: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(analyze.join("trial_analysis.json")).unwrap(),
    )
    .unwrap();
    let n_total =
        analysis["control"]["n"].as_u64().unwrap() + analysis["treatment"]["n"].as_u64().unwrap();
    assert_eq!(n_total, 2000);

    // Every run directory carries its own provenance.
    for dir in [
        &cohort_a,
        &cohort_b,
        &ingest,
        &features,
        &propensity,
        &trim,
        &train,
        &evaluate,
        &ope,
        &export,
        &distill,
        &simulate,
        &analyze,
    ] {
        assert!(dir.join("manifest.json").exists(), "{}", dir.display());
        assert!(
            dir.join("effective_config.toml").exists(),
            "{}",
            dir.display()
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(analyze.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["version"], 1);
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["input_hashes"]["counts"].as_str().unwrap().len() == 64);
    assert_eq!(manifest["steps"][0]["name"], "trial-analyze");

    std::fs::remove_dir_all(&base).unwrap();
}

#[test]
fn multi_day_pipeline_writes_per_day_models() {
    let base = scratch("days");
    let out = base.join("run");
    let result = run(&[
        "pipeline",
        "--days",
        "2",
        "--set",
        "synth.n_rows=3000",
        "--set",
        "synth.n_days=2",
        "--set",
        "synth.n_numeric=4",
        "--set",
        "features.k_best=6",
        "--set",
        "train.n_forests=2",
        "--set",
        "train.n_trees=4",
        "--set",
        "train.min_leaf_per_arm=5",
        "--set",
        "train.max_depth=4",
        "--set",
        "ope.n_reps=50",
        "--set",
        "ope.n_grid=4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for day in 1..=2 {
        let day_dir = out.join(format!("day-{day}"));
        for artifact in ["ensemble.json", "evaluation.json", "trial_analysis.json"] {
            assert!(
                day_dir.join(artifact).exists(),
                "day {day} missing {artifact}"
            );
        }
    }
    // Distinct cohorts and seeds produce distinct per-day models.
    assert_ne!(
        std::fs::read(out.join("day-1/ensemble.json")).unwrap(),
        std::fs::read(out.join("day-2/ensemble.json")).unwrap()
    );
    std::fs::remove_dir_all(&base).unwrap();
}
