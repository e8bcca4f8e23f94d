//! Shape properties of the off-policy value curve on the two-segment world,
//! evaluated with oracle scores so no model training is needed: the random
//! ranking traces the chord between the constant policies, the oracle
//! ranking peaks strictly inside, and a sign-of-effect policy beats both
//! constant policies decisively.

use uplift_core::data::synthetic::{generate, EffectFunction, LinearLogit, SyntheticSpec};
use uplift_core::ope::{
    ope_curve, policy_value_report, pooled_halfwidth, BootstrapParams, OpeCurveParams, OpePoint,
    PropensitySource,
};
use uplift_core::{Action, Dataset};

const SEGMENT_SPLIT: f64 = -0.2533471031357997;

fn world(n_rows: usize, seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        n_rows,
        n_numeric: 4,
        n_categorical: 0,
        n_categories: 3,
        n_days: 1,
        baseline: LinearLogit {
            intercept: -2.2,
            weights: vec![0.8, 0.5],
        },
        effect: EffectFunction::TwoSegment {
            feature: 2,
            threshold: SEGMENT_SPLIT,
            below: -0.10,
            above: 0.15,
        },
        logging: LinearLogit {
            intercept: 0.0,
            weights: vec![],
        },
        propensity_clip: (0.01, 0.99),
        seed,
    })
    .unwrap()
}

fn oracle_scores(world: &Dataset) -> Vec<f64> {
    world.rows().iter().map(|r| r.true_cate.unwrap()).collect()
}

fn halfwidth(point: &OpePoint) -> f64 {
    let est = point.estimate.as_ref().expect("point is non-degenerate");
    (est.ci_high - est.ci_low) / 2.0
}

fn value(point: &OpePoint) -> f64 {
    point
        .estimate
        .as_ref()
        .expect("point is non-degenerate")
        .value
}

#[test]
fn curve_shapes_match_the_two_segment_world() {
    let world = world(50_000, 70);
    let scores = oracle_scores(&world);
    let params = OpeCurveParams {
        n_grid: 20,
        bootstrap: BootstrapParams {
            n_reps: 200,
            level: 0.95,
            seed: 71,
        },
    };
    let set = ope_curve(&world, &scores, &params).unwrap();

    // Random ranking: value moves (approximately) linearly from the
    // never-contact value to the always-contact value; check every interior
    // point against the chord within 2 pooled half-widths.
    let points = &set.random.points;
    let first = points.first().unwrap();
    let last = points.last().unwrap();
    assert_eq!(first.fraction, 0.0);
    assert_eq!(last.fraction, 1.0);
    let (v0, v1) = (value(first), value(last));
    let (hw0, hw1) = (halfwidth(first), halfwidth(last));
    for point in &points[1..points.len() - 1] {
        let f = point.fraction;
        let chord = v0 + (v1 - v0) * f;
        // The chord value inherits fraction-weighted endpoint uncertainty.
        let chord_hw = (((1.0 - f) * hw0).powi(2) + (f * hw1).powi(2)).sqrt();
        let budget = 2.0 * (halfwidth(point).powi(2) + chord_hw.powi(2)).sqrt();
        let deviation = (value(point) - chord).abs();
        assert!(
            deviation <= budget,
            "fraction {f}: deviation {deviation} exceeds {budget}"
        );
    }

    // Oracle ranking: contacting only the positive-effect segment beats
    // both endpoints; the curve's maximum sits strictly inside.
    let cate_points = &set.cate.points;
    let cate_first = cate_points.first().unwrap();
    let cate_last = cate_points.last().unwrap();
    let best = cate_points
        .iter()
        .max_by(|a, b| value(a).total_cmp(&value(b)))
        .unwrap();
    assert!(best.fraction > 0.0 && best.fraction < 1.0);
    for endpoint in [cate_first, cate_last] {
        let est_best = best.estimate.as_ref().unwrap();
        let est_end = endpoint.estimate.as_ref().unwrap();
        let margin = value(best) - value(endpoint);
        let budget = 2.0 * pooled_halfwidth(est_best, est_end);
        assert!(
            margin > budget,
            "max at {} above endpoint {} by {margin}, needs {budget}",
            best.fraction,
            endpoint.fraction
        );
    }
}

#[test]
fn sign_policy_beats_both_constant_policies() {
    let world = world(20_000, 72);
    let actions: Vec<Action> = world
        .rows()
        .iter()
        .map(|r| {
            if r.true_cate.unwrap() >= 0.0 {
                Action::Contact
            } else {
                Action::NoContact
            }
        })
        .collect();
    let params = BootstrapParams {
        n_reps: 400,
        level: 0.95,
        seed: 73,
    };
    let report = policy_value_report(&world, &actions, PropensitySource::Logged, &params).unwrap();
    let new = report.entry("new").unwrap();
    let always = report.entry("always").unwrap();
    let never = report.entry("never").unwrap();

    for constant in [always, never] {
        let margin = new.estimate.value - constant.estimate.value;
        let budget = 2.0 * pooled_halfwidth(&new.estimate, &constant.estimate);
        assert!(
            margin > budget,
            "new {} vs {} {}: margin {margin}, needs {budget}",
            new.estimate.value,
            constant.policy,
            constant.estimate.value
        );
    }

    // Contact rates are part of the report: the sign policy contacts the
    // positive segment (60%), the constants contact all or none.
    assert!((new.contact_rate - 0.60).abs() < 0.02);
    assert_eq!(always.contact_rate, 1.0);
    assert_eq!(never.contact_rate, 0.0);

    // The existing (logged) policy is a coin flip here; its value sits
    // between the constants' and below the new policy's.
    let existing = report.entry("existing").unwrap();
    assert!(existing.estimate.value < new.estimate.value);
}
