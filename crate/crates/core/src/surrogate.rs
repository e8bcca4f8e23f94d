//! Distills a contact policy into a small explanatory decision tree.
//!
//! An ensemble of uplift forests is accurate but opaque. For review and
//! sign-off it helps to show a shallow classification tree that imitates the
//! policy's recommendations on a reference dataset: each path reads as a
//! plain business rule ("young account, no prior contact → contact"). The
//! surrogate is an explanation, not a replacement — its `fidelity` field
//! records exactly how much of the policy it reproduces.
//!
//! The tree is a greedy Gini-impurity CART over the original features,
//! trained on the policy's recommendations (never on outcomes). Fitting is
//! fully deterministic: no sampling, candidate splits are scanned in feature
//! order, and ties prefer the lower feature index and lower threshold.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Action, Dataset};
use crate::forest::UpliftEnsemble;
use crate::policy::{recommend_batch, PolicyError, ThresholdPolicy};

/// Default depth of the distilled tree: deep enough for a two-sided rule,
/// shallow enough to read at a glance.
pub const DEFAULT_SURROGATE_DEPTH: usize = 3;

/// Errors from surrogate distillation.
#[derive(Debug, Error)]
pub enum SurrogateError {
    /// No rows were supplied.
    #[error("input is empty")]
    Empty,
    /// A depth of zero cannot hold a single rule.
    #[error("max_depth must be at least 1")]
    InvalidDepth,
    /// Action vector and dataset rows disagree in length.
    #[error("length mismatch: {actions} actions for {rows} rows")]
    LengthMismatch { actions: usize, rows: usize },
    /// Feature vector of the wrong width.
    #[error("expected {expected} features, got {found}")]
    FeatureWidth { expected: usize, found: usize },
    /// Failure while computing the recommendations to imitate.
    #[error(transparent)]
    Policy(#[from] PolicyError),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Document (de)serialization failure.
    #[error("surrogate document is corrupt or truncated: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One node of the surrogate tree, stored in a flat pre-order vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateNode {
    /// Rows with `feature < threshold` go left, the rest go right.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
    },
    Leaf {
        action: Action,
        n: usize,
        n_contact: usize,
    },
}

/// A shallow classification tree imitating a policy, with its measured
/// agreement on the reference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub max_depth: usize,
    pub feature_names: Vec<String>,
    /// Fraction of reference rows where the tree and the policy agree.
    pub fidelity: f64,
    nodes: Vec<SurrogateNode>,
}

impl SurrogateTree {
    pub fn nodes(&self) -> &[SurrogateNode] {
        &self.nodes
    }

    /// The recommendation the tree assigns to one feature vector.
    pub fn predict_row(&self, features: &[f64]) -> Result<Action, SurrogateError> {
        if features.len() != self.feature_names.len() {
            return Err(SurrogateError::FeatureWidth {
                expected: self.feature_names.len(),
                found: features.len(),
            });
        }
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                SurrogateNode::Leaf { action, .. } => return Ok(*action),
                SurrogateNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if features[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Depth of the deepest leaf (a lone root leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[SurrogateNode], at: usize) -> usize {
            match &nodes[at] {
                SurrogateNode::Leaf { .. } => 0,
                SurrogateNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Plain-text rendering, one indented line per node.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "policy surrogate (depth <= {}, fidelity {:.4})\n",
            self.max_depth, self.fidelity
        );
        self.render_node(0, 0, &mut out);
        out
    }

    fn render_node(&self, at: usize, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match &self.nodes[at] {
            SurrogateNode::Leaf {
                action,
                n,
                n_contact,
            } => {
                out.push_str(&format!(
                    "{pad}recommend {action} ({n_contact} of {n} rows were recommended contact)\n"
                ));
            }
            SurrogateNode::Split {
                feature,
                threshold,
                left,
                right,
                n,
            } => {
                let name = &self.feature_names[*feature];
                out.push_str(&format!("{pad}if {name} < {threshold} ({n} rows):\n"));
                self.render_node(*left, indent + 1, out);
                out.push_str(&format!("{pad}else:\n"));
                self.render_node(*right, indent + 1, out);
            }
        }
    }

    /// Writes the tree as a single JSON document.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), SurrogateError> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, SurrogateError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Gini impurity of a node with `c` contact labels out of `n`.
fn gini(c: f64, n: f64) -> f64 {
    let p = c / n;
    let q = 1.0 - p;
    1.0 - p * p - q * q
}

struct FitContext<'a> {
    columns: Vec<Vec<f64>>,
    labels: Vec<bool>,
    max_depth: usize,
    nodes: &'a mut Vec<SurrogateNode>,
}

/// Best Gini split over all features and boundaries, or `None` when nothing
/// strictly reduces impurity.
fn best_gini_split(ctx: &FitContext<'_>, indices: &[usize]) -> Option<(usize, f64)> {
    let n = indices.len();
    let n_f = n as f64;
    let total_contact = indices.iter().filter(|&&i| ctx.labels[i]).count() as f64;
    let parent = gini(total_contact, n_f);
    if parent == 0.0 {
        return None;
    }

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, gain)
    let mut sorted: Vec<usize> = Vec::with_capacity(n);
    for (feature, column) in ctx.columns.iter().enumerate() {
        sorted.clear();
        sorted.extend_from_slice(indices);
        sorted.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));

        let mut left_n = 0.0;
        let mut left_contact = 0.0;
        for pos in 0..n - 1 {
            let i = sorted[pos];
            left_n += 1.0;
            left_contact += ctx.labels[i] as u8 as f64;
            let lo = column[i];
            let hi = column[sorted[pos + 1]];
            if lo == hi {
                continue;
            }
            let right_n = n_f - left_n;
            let right_contact = total_contact - left_contact;
            let weighted = (left_n / n_f) * gini(left_contact, left_n)
                + (right_n / n_f) * gini(right_contact, right_n);
            let gain = parent - weighted;
            if gain <= 0.0 {
                continue;
            }
            // Midpoint, nudged up if rounding lands it on the lower value,
            // so `x < threshold` routes exactly the swept prefix left.
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold <= lo {
                threshold = hi;
            }
            let better = match best {
                None => true,
                Some((bf, bt, bg)) => {
                    gain > bg || (gain == bg && (feature < bf || (feature == bf && threshold < bt)))
                }
            };
            if better {
                best = Some((feature, threshold, gain));
            }
        }
    }
    best.map(|(feature, threshold, _)| (feature, threshold))
}

fn build_node(ctx: &mut FitContext<'_>, indices: &[usize], depth: usize) -> usize {
    let n = indices.len();
    let n_contact = indices.iter().filter(|&&i| ctx.labels[i]).count();
    let make_leaf = |nodes: &mut Vec<SurrogateNode>| {
        // Exact ties lean toward contact, matching the policy's own
        // boundary behavior.
        let action = if 2 * n_contact >= n {
            Action::Contact
        } else {
            Action::NoContact
        };
        nodes.push(SurrogateNode::Leaf {
            action,
            n,
            n_contact,
        });
        nodes.len() - 1
    };

    if depth >= ctx.max_depth || n < 2 {
        return make_leaf(ctx.nodes);
    }
    let Some((feature, threshold)) = best_gini_split(ctx, indices) else {
        return make_leaf(ctx.nodes);
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| ctx.columns[feature][i] < threshold);

    let node_index = ctx.nodes.len();
    ctx.nodes.push(SurrogateNode::Leaf {
        action: Action::NoContact,
        n,
        n_contact,
    });
    let left = build_node(ctx, &left_idx, depth + 1);
    let right = build_node(ctx, &right_idx, depth + 1);
    ctx.nodes[node_index] = SurrogateNode::Split {
        feature,
        threshold,
        left,
        right,
        n,
    };
    node_index
}

/// Fits a surrogate tree to explicit recommendations, one per dataset row.
///
/// Rows are taken in id order so the tree is independent of storage order;
/// fidelity is the exact agreement fraction on the same rows.
pub fn fit_surrogate(
    dataset: &Dataset,
    actions: &[Action],
    max_depth: usize,
) -> Result<SurrogateTree, SurrogateError> {
    if dataset.is_empty() {
        return Err(SurrogateError::Empty);
    }
    if max_depth == 0 {
        return Err(SurrogateError::InvalidDepth);
    }
    if actions.len() != dataset.len() {
        return Err(SurrogateError::LengthMismatch {
            actions: actions.len(),
            rows: dataset.len(),
        });
    }

    let rows = dataset.rows();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].id.cmp(&rows[b].id));

    let n_features = dataset.schema().len();
    let mut columns = vec![Vec::with_capacity(rows.len()); n_features];
    let mut labels = Vec::with_capacity(rows.len());
    for &i in &order {
        for (f, column) in columns.iter_mut().enumerate() {
            column.push(rows[i].features[f]);
        }
        labels.push(actions[i].is_contact());
    }

    let mut nodes = Vec::new();
    let indices: Vec<usize> = (0..order.len()).collect();
    let mut ctx = FitContext {
        columns,
        labels,
        max_depth,
        nodes: &mut nodes,
    };
    build_node(&mut ctx, &indices, 0);

    let mut tree = SurrogateTree {
        max_depth,
        feature_names: dataset.schema().names().to_vec(),
        fidelity: 0.0,
        nodes,
    };
    let mut agree = 0usize;
    for (row, action) in rows.iter().zip(actions) {
        if tree.predict_row(&row.features)? == *action {
            agree += 1;
        }
    }
    tree.fidelity = agree as f64 / rows.len() as f64;
    Ok(tree)
}

/// Distills the policy's recommendations on `dataset` into a surrogate tree.
pub fn distill_surrogate(
    policy: &ThresholdPolicy,
    ensemble: &UpliftEnsemble,
    dataset: &Dataset,
    max_depth: usize,
) -> Result<SurrogateTree, SurrogateError> {
    let batch = recommend_batch(policy, ensemble, dataset)?;
    let actions: Vec<Action> = batch
        .recommendations
        .iter()
        .map(|r| r.recommendation)
        .collect();
    fit_surrogate(dataset, &actions, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, ObservationRow};
    use crate::seed;
    use rand::Rng;

    /// Builds a dataset with the given feature matrix; ids follow row order.
    fn dataset_from(features: Vec<Vec<f64>>, names: &[&str]) -> Dataset {
        let schema = FeatureSchema::new(names.iter().map(|s| s.to_string()).collect()).unwrap();
        let rows = features
            .into_iter()
            .enumerate()
            .map(|(i, f)| ObservationRow {
                id: format!("r{i:04}"),
                day_index: 1,
                features: f,
                action: if i % 2 == 0 {
                    Action::Contact
                } else {
                    Action::NoContact
                },
                outcome: false,
                propensity: Some(0.5),
                true_cate: None,
                potential_outcomes: None,
            })
            .collect();
        Dataset::new(schema, rows, 90).unwrap()
    }

    fn rule_labels(dataset: &Dataset, rule: impl Fn(&[f64]) -> bool) -> Vec<Action> {
        dataset
            .rows()
            .iter()
            .map(|r| {
                if rule(&r.features) {
                    Action::Contact
                } else {
                    Action::NoContact
                }
            })
            .collect()
    }

    /// A policy that is itself a depth-1 rule is recovered exactly.
    #[test]
    fn depth_one_rule_is_recovered_with_perfect_fidelity() {
        let mut rng = seed::rng(seed::derive(42, "surrogate-rule"));
        let features: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let dataset = dataset_from(features, &["n_a", "n_b"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 0.3);
        let tree = fit_surrogate(&dataset, &actions, 1).unwrap();
        assert_eq!(tree.fidelity, 1.0);
        assert_eq!(tree.depth(), 1);
        match &tree.nodes()[0] {
            SurrogateNode::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert!((threshold - 0.3).abs() < 0.05, "threshold {threshold}");
            }
            other => panic!("expected a root split, got {other:?}"),
        }
    }

    /// An OR-of-two-features rule needs depth 2; depth 1 must fall short.
    #[test]
    fn depth_limit_binds_and_deeper_trees_recover_the_rule() {
        let mut rng = seed::rng(seed::derive(42, "surrogate-or"));
        let features: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let dataset = dataset_from(features, &["n_a", "n_b"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 0.5 || f[1] >= 0.5);

        let shallow = fit_surrogate(&dataset, &actions, 1).unwrap();
        assert!(shallow.depth() <= 1);
        assert!(shallow.fidelity < 1.0);

        let deep = fit_surrogate(&dataset, &actions, 2).unwrap();
        assert!(deep.depth() <= 2);
        assert_eq!(deep.fidelity, 1.0);
    }

    #[test]
    fn pure_recommendations_collapse_to_a_single_leaf() {
        let features: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let dataset = dataset_from(features, &["n_a"]);
        let actions = vec![Action::Contact; 20];
        let tree = fit_surrogate(&dataset, &actions, 3).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.fidelity, 1.0);
        assert_eq!(tree.predict_row(&[5.0]).unwrap(), Action::Contact);
    }

    #[test]
    fn zero_depth_and_empty_input_are_rejected() {
        let features: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let dataset = dataset_from(features, &["n_a"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 2.0);
        assert!(matches!(
            fit_surrogate(&dataset, &actions, 0),
            Err(SurrogateError::InvalidDepth)
        ));
        assert!(matches!(
            fit_surrogate(&dataset, &actions[..2], 2),
            Err(SurrogateError::LengthMismatch {
                actions: 2,
                rows: 4
            })
        ));
    }

    /// Identical columns: the split must deterministically take the lower
    /// feature index.
    #[test]
    fn ties_prefer_the_lower_feature_index() {
        let mut rng = seed::rng(seed::derive(42, "surrogate-tie"));
        let features: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let v = rng.random::<f64>();
                vec![v, v]
            })
            .collect();
        let dataset = dataset_from(features, &["n_a", "n_b"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 0.5);
        let tree = fit_surrogate(&dataset, &actions, 1).unwrap();
        match &tree.nodes()[0] {
            SurrogateNode::Split { feature, .. } => assert_eq!(*feature, 0),
            other => panic!("expected a root split, got {other:?}"),
        }
    }

    /// Storage order must not influence the fitted tree or its fidelity.
    #[test]
    fn fit_is_invariant_to_row_order() {
        let mut rng = seed::rng(seed::derive(42, "surrogate-order"));
        let features: Vec<Vec<f64>> = (0..150)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let dataset = dataset_from(features, &["n_a", "n_b"]);
        let actions = rule_labels(&dataset, |f| f[0] + 0.3 * f[1] >= 0.6);
        let tree = fit_surrogate(&dataset, &actions, 3).unwrap();

        let mut reversed_rows = dataset.rows().to_vec();
        reversed_rows.reverse();
        let mut reversed_actions = actions.clone();
        reversed_actions.reverse();
        let reversed = Dataset::new(dataset.schema().clone(), reversed_rows, 90).unwrap();
        let tree_rev = fit_surrogate(&reversed, &reversed_actions, 3).unwrap();
        assert_eq!(tree, tree_rev);
        assert_eq!(tree.fidelity.to_bits(), tree_rev.fidelity.to_bits());
    }

    #[test]
    fn rendering_names_features_and_actions() {
        let mut rng = seed::rng(seed::derive(42, "surrogate-render"));
        let features: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let dataset = dataset_from(features, &["n_age_days", "n_balance"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 0.5);
        let tree = fit_surrogate(&dataset, &actions, 2).unwrap();
        let text = tree.render_text();
        assert!(text.contains("n_age_days"), "render was:\n{text}");
        assert!(text.contains("recommend contact"), "render was:\n{text}");
        assert!(text.contains("recommend no_contact"), "render was:\n{text}");
    }

    #[test]
    fn surrogate_document_round_trips() {
        let mut rng = seed::rng(seed::derive(42, "surrogate-json"));
        let features: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random::<f64>()]).collect();
        let dataset = dataset_from(features, &["n_a"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 0.4);
        let tree = fit_surrogate(&dataset, &actions, 2).unwrap();

        let dir = std::env::temp_dir().join(format!("surrogate-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("surrogate.json");
        tree.save(&path).unwrap();
        let loaded = SurrogateTree::load(&path).unwrap();
        assert_eq!(tree, loaded);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn predict_checks_feature_width() {
        let features: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let dataset = dataset_from(features, &["n_a"]);
        let actions = rule_labels(&dataset, |f| f[0] >= 5.0);
        let tree = fit_surrogate(&dataset, &actions, 1).unwrap();
        assert!(matches!(
            tree.predict_row(&[1.0, 2.0]),
            Err(SurrogateError::FeatureWidth {
                expected: 1,
                found: 2
            })
        ));
    }
}
