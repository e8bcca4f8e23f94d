//! Uplift random forests.
//!
//! Each tree is grown on a same-size bootstrap resample and splits on
//! thresholds chosen to maximize the divergence between treatment and
//! control outcome distributions (see [`split`]). A leaf predicts the
//! smoothed difference in conversion rates between the arms — an estimate of
//! the conditional average treatment effect for rows routed there.
//!
//! Single uplift trees are high-variance, so predictions are averaged twice:
//! a forest averages its trees, and the ensemble averages several
//! independently seeded forests. Training is deterministic for a given
//! (dataset, params, seed) triple regardless of thread count or row order:
//! every tree's RNG seed is derived up front and rows are canonicalized by
//! id before any randomness is consumed.

pub mod importance;
pub mod split;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FeatureSchema};
use crate::seed;
use split::{ArmCounts, Divergence};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has no {0} rows; uplift estimation needs both arms")]
    SingleArm(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported model document version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("bootstrap resampling kept producing single-arm samples; the dataset is too unbalanced to train on")]
    DegenerateBootstrap,
    #[error("feature schema mismatch: model was fitted on a different schema (hash {expected}, got {found})")]
    SchemaMismatch { expected: String, found: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error on {path}: {source}")]
    Serde {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Hyper-parameters for the whole ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub n_forests: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum rows of each arm that every child of a split must retain.
    pub min_leaf_per_arm: usize,
    /// Features sampled per node; `None` means ceil(sqrt(p)).
    pub mtry: Option<usize>,
    pub divergence: Divergence,
    /// Additive smoothing for conversion rates; must be positive.
    pub smoothing: f64,
    /// Cap on candidate thresholds per feature per node.
    pub max_threshold_candidates: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_forests: 30,
            n_trees: 100,
            max_depth: 8,
            min_leaf_per_arm: 30,
            mtry: None,
            divergence: Divergence::Kl,
            smoothing: 0.5,
            max_threshold_candidates: 32,
        }
    }
}

impl TreeParams {
    fn validate(&self) -> Result<(), ForestError> {
        let invalid = |m: String| Err(ForestError::InvalidParams(m));
        if self.n_forests == 0 || self.n_trees == 0 {
            return invalid("n_forests and n_trees must be positive".into());
        }
        if self.max_depth == 0 {
            return invalid("max_depth must be at least 1".into());
        }
        if self.min_leaf_per_arm == 0 {
            return invalid("min_leaf_per_arm must be positive".into());
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail this check
        if !(self.smoothing > 0.0) {
            return invalid(format!(
                "smoothing must be positive, got {} (zero would allow degenerate divergences)",
                self.smoothing
            ));
        }
        if self.max_threshold_candidates == 0 {
            return invalid("max_threshold_candidates must be positive".into());
        }
        if self.mtry == Some(0) {
            return invalid("mtry must be positive when set".into());
        }
        Ok(())
    }
}

/// Outcome counts and the uplift estimate of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub n_t: u32,
    pub n_c: u32,
    pub y_t: u32,
    pub y_c: u32,
    pub uplift: f64,
}

impl NodeStats {
    fn from_counts(counts: ArmCounts, smoothing: f64) -> Self {
        Self {
            n_t: counts.n_t,
            n_c: counts.n_c,
            y_t: counts.y_t,
            y_c: counts.y_c,
            uplift: counts.uplift(smoothing),
        }
    }
}

/// Flat-array tree node; children are indices into the tree's node vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        stats: NodeStats,
    },
    Leaf {
        stats: NodeStats,
    },
}

impl Node {
    pub fn stats(&self) -> &NodeStats {
        match self {
            Node::Split { stats, .. } | Node::Leaf { stats } => stats,
        }
    }
}

/// One bootstrap-grown uplift tree; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftTree {
    pub seed: u64,
    nodes: Vec<Node>,
}

impl UpliftTree {
    pub fn predict_row(&self, features: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { stats } => return stats.uplift,
                Node::Split {
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

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

/// A bag of trees; predicts their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftForest {
    trees: Vec<UpliftTree>,
}

impl UpliftForest {
    pub fn predict_row(&self, features: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(features)).sum();
        sum / self.trees.len() as f64
    }

    pub fn trees(&self) -> &[UpliftTree] {
        &self.trees
    }
}

/// Document version written by [`UpliftEnsemble::save`]; loads of any other
/// version are rejected rather than misread.
pub const ENSEMBLE_DOC_VERSION: u32 = 1;

fn default_doc_version() -> u32 {
    ENSEMBLE_DOC_VERSION
}

/// The full model: independently seeded forests averaged together, plus the
/// schema fingerprint that guards prediction inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftEnsemble {
    #[serde(default = "default_doc_version")]
    pub version: u32,
    pub params: TreeParams,
    pub feature_names: Vec<String>,
    pub schema_hash: String,
    pub seed: u64,
    forests: Vec<UpliftForest>,
}

struct TrainContext<'a> {
    columns: Vec<Vec<f64>>,
    treated: Vec<bool>,
    outcome: Vec<bool>,
    n_features: usize,
    mtry: usize,
    params: &'a TreeParams,
}

fn build_tree(ctx: &TrainContext<'_>, tree_seed: u64) -> Result<UpliftTree, ForestError> {
    let n = ctx.treated.len();
    let mut rng = seed::rng(tree_seed);

    // Same-size bootstrap; redraw (bounded) if a resample lost an entire
    // arm, since such a sample carries no uplift signal at all.
    let mut indices: Vec<u32> = Vec::with_capacity(n);
    let mut attempts = 0;
    loop {
        use rand::Rng;
        indices.clear();
        indices.extend((0..n).map(|_| rng.random_range(0..n) as u32));
        let treated_count = indices.iter().filter(|&&i| ctx.treated[i as usize]).count();
        if treated_count > 0 && treated_count < n {
            break;
        }
        attempts += 1;
        if attempts > 50 {
            return Err(ForestError::DegenerateBootstrap);
        }
    }

    let mut nodes = Vec::new();
    build_node(ctx, &mut rng, indices, 0, &mut nodes);
    Ok(UpliftTree {
        seed: tree_seed,
        nodes,
    })
}

fn build_node(
    ctx: &TrainContext<'_>,
    rng: &mut rand_chacha::ChaCha12Rng,
    indices: Vec<u32>,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut counts = ArmCounts::default();
    for &i in &indices {
        counts.add(ctx.treated[i as usize], ctx.outcome[i as usize]);
    }
    let stats = NodeStats::from_counts(counts, ctx.params.smoothing);
    let node_index = nodes.len();
    nodes.push(Node::Leaf { stats });

    if depth >= ctx.params.max_depth {
        return node_index;
    }

    // Per-node feature sample, sorted so the tie-break order (lowest index
    // first) is independent of sampling order.
    let mut features = rand::seq::index::sample(rng, ctx.n_features, ctx.mtry).into_vec();
    features.sort_unstable();

    let Some(best) = split::best_split(
        &indices,
        &ctx.columns,
        &ctx.treated,
        &ctx.outcome,
        &features,
        counts,
        ctx.params,
    ) else {
        return node_index;
    };

    let column = &ctx.columns[best.feature];
    let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = indices
        .into_iter()
        .partition(|&i| column[i as usize] < best.threshold);

    let left = build_node(ctx, rng, left_rows, depth + 1, nodes);
    let right = build_node(ctx, rng, right_rows, depth + 1, nodes);
    nodes[node_index] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left,
        right,
        stats,
    };
    node_index
}

/// Trains the full ensemble. Trees are built in parallel; results are
/// reduced in index order, so output is identical for any thread count.
pub fn fit(
    dataset: &Dataset,
    params: &TreeParams,
    master_seed: u64,
) -> Result<UpliftEnsemble, ForestError> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(ForestError::Empty);
    }

    // Canonical row order: training must not depend on how rows were stored.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| dataset.rows()[a].id.cmp(&dataset.rows()[b].id));

    let n_features = dataset.schema().len();
    if n_features == 0 {
        return Err(ForestError::InvalidParams(
            "dataset has no feature columns".into(),
        ));
    }
    let columns: Vec<Vec<f64>> = (0..n_features)
        .map(|j| {
            order
                .iter()
                .map(|&i| dataset.rows()[i].features[j])
                .collect()
        })
        .collect();
    let treated: Vec<bool> = order
        .iter()
        .map(|&i| dataset.rows()[i].action.is_contact())
        .collect();
    let outcome: Vec<bool> = order.iter().map(|&i| dataset.rows()[i].outcome).collect();

    if treated.iter().all(|&t| !t) {
        return Err(ForestError::SingleArm("treated"));
    }
    if treated.iter().all(|&t| t) {
        return Err(ForestError::SingleArm("control"));
    }

    let mtry = params
        .mtry
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .clamp(1, n_features);
    if params.mtry.is_some_and(|m| m > n_features) {
        return Err(ForestError::InvalidParams(format!(
            "mtry {} exceeds the {} available features",
            params.mtry.unwrap(),
            n_features
        )));
    }

    let ctx = TrainContext {
        columns,
        treated,
        outcome,
        n_features,
        mtry,
        params,
    };

    // One seed per (forest, tree), derived before any parallel work starts.
    let tree_seeds: Vec<u64> = (0..params.n_forests)
        .flat_map(|f| {
            let forest_seed = seed::derive_indexed(master_seed, "forest", f as u64);
            (0..params.n_trees).map(move |t| seed::derive_indexed(forest_seed, "tree", t as u64))
        })
        .collect();

    let trees: Result<Vec<UpliftTree>, ForestError> = tree_seeds
        .par_iter()
        .map(|&s| build_tree(&ctx, s))
        .collect();
    let mut trees = trees?;

    let mut forests = Vec::with_capacity(params.n_forests);
    for _ in 0..params.n_forests {
        let rest = trees.split_off(params.n_trees);
        forests.push(UpliftForest { trees });
        trees = rest;
    }

    Ok(UpliftEnsemble {
        version: ENSEMBLE_DOC_VERSION,
        params: params.clone(),
        feature_names: dataset.schema().names().to_vec(),
        schema_hash: dataset.schema().schema_hash(),
        seed: master_seed,
        forests,
    })
}

impl UpliftEnsemble {
    pub fn forests(&self) -> &[UpliftForest] {
        &self.forests
    }

    /// CATE estimate for one feature vector: the mean over forests of each
    /// forest's mean tree prediction, summed in fixed order.
    pub fn predict_row(&self, features: &[f64]) -> Result<f64, ForestError> {
        if features.len() != self.feature_names.len() {
            return Err(ForestError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found: format!("{}-column row", features.len()),
            });
        }
        let sum: f64 = self.forests.iter().map(|f| f.predict_row(features)).sum();
        Ok(sum / self.forests.len() as f64)
    }

    /// Predictions for every row, parallelized across rows (per-row
    /// arithmetic keeps its fixed order, so results are thread-independent).
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<f64>, ForestError> {
        self.check_schema(dataset.schema())?;
        dataset
            .rows()
            .par_iter()
            .map(|r| self.predict_row(&r.features))
            .collect()
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), ForestError> {
        let found = schema.schema_hash();
        if found != self.schema_hash {
            return Err(ForestError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn n_trees_total(&self) -> usize {
        self.forests.iter().map(|f| f.trees.len()).sum()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ForestError> {
        let file = std::fs::File::create(path).map_err(|e| ForestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|e| ForestError::Serde {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ForestError> {
        let file = std::fs::File::open(path).map_err(|e| ForestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let model: Self = serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| {
            ForestError::Serde {
                path: path.display().to_string(),
                source: e,
            }
        })?;
        if model.version != ENSEMBLE_DOC_VERSION {
            return Err(ForestError::UnsupportedVersion {
                found: model.version,
                supported: ENSEMBLE_DOC_VERSION,
            });
        }
        Ok(model)
    }
}
