//! L2-regularized logistic regression via damped Newton iterations.
//!
//! Serves two roles: fitting logging propensities e(x) = P(contact | x) from
//! observational data, and fitting the purely predictive response model
//! P(outcome | x) that uplift models are compared against. Features are
//! standardized internally (train-split moments are stored on the model), so
//! coefficients live in standardized space and prediction is
//! location/scale-free for callers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FeatureSchema};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    Empty,
    #[error("all target labels are identical; an unregularized fit would diverge")]
    SingleClass,
    #[error("Newton system is singular or produced non-finite parameters")]
    Degenerate,
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

/// Which binary column of the dataset to regress on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The logged action: fits a propensity model.
    Action,
    /// The realized outcome: fits a predictive response model.
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticParams {
    /// Penalty strength; (l2/2)*||params||^2 is added to the mean NLL scale
    /// (the penalty covers the intercept too, keeping single-class fits
    /// bounded).
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence: largest absolute parameter update below this.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// A fitted model: standardization moments plus coefficients in
/// standardized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub schema_hash: String,
    pub target: Target,
    means: Vec<f64>,
    stds: Vec<f64>,
    intercept: f64,
    weights: Vec<f64>,
    pub l2: f64,
    pub converged: bool,
    pub n_iter: usize,
}

/// Penalized negative log-likelihood on a standardized design:
/// sum_i [ln(1 + exp(s_i)) - y_i * s_i] + (l2/2)(b^2 + ||w||^2)
/// with s_i = b + w . z_i.
pub fn penalized_nll(z: &[Vec<f64>], y: &[bool], intercept: f64, weights: &[f64], l2: f64) -> f64 {
    let mut nll = 0.0;
    for (zi, &yi) in z.iter().zip(y) {
        let s = intercept + dot(weights, zi);
        // ln(1+exp(s)) computed stably for both signs of s.
        let log1p_exp = if s > 0.0 {
            s + (-s).exp().ln_1p()
        } else {
            s.exp().ln_1p()
        };
        nll += log1p_exp - if yi { s } else { 0.0 };
    }
    let sq = intercept * intercept + weights.iter().map(|w| w * w).sum::<f64>();
    nll + 0.5 * l2 * sq
}

/// Analytic gradient of [`penalized_nll`]: returns (d/d intercept, d/d weights).
pub fn penalized_grad(
    z: &[Vec<f64>],
    y: &[bool],
    intercept: f64,
    weights: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut g0 = l2 * intercept;
    let mut g: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    for (zi, &yi) in z.iter().zip(y) {
        let s = intercept + dot(weights, zi);
        let r = sigmoid(s) - if yi { 1.0 } else { 0.0 };
        g0 += r;
        for (gj, &zij) in g.iter_mut().zip(zi) {
            *gj += r * zij;
        }
    }
    (g0, g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn standardize(dataset: &Dataset) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let n = dataset.len() as f64;
    let p = dataset.schema().len();
    let mut means = vec![0.0; p];
    for row in dataset.rows() {
        for (m, &x) in means.iter_mut().zip(&row.features) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut vars = vec![0.0; p];
    for row in dataset.rows() {
        for ((v, &m), &x) in vars.iter_mut().zip(&means).zip(&row.features) {
            let d = x - m;
            *v += d * d;
        }
    }
    let stds: Vec<f64> = vars.iter().map(|v| (v / n).sqrt()).collect();
    let z = dataset
        .rows()
        .iter()
        .map(|row| standardize_row(&row.features, &means, &stds))
        .collect();
    (means, stds, z)
}

fn standardize_row(features: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    features
        .iter()
        .zip(means)
        .zip(stds)
        .map(|((&x, &m), &s)| if s > 0.0 { (x - m) / s } else { 0.0 })
        .collect()
}

/// Fits a logistic model of the chosen target on the dataset's features.
pub fn fit(
    dataset: &Dataset,
    target: Target,
    params: LogisticParams,
) -> Result<LogisticModel, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::Empty);
    }
    let y: Vec<bool> = match target {
        Target::Action => dataset
            .rows()
            .iter()
            .map(|r| r.action.is_contact())
            .collect(),
        Target::Outcome => dataset.rows().iter().map(|r| r.outcome).collect(),
    };
    let single_class = y.iter().all(|&v| v) || y.iter().all(|&v| !v);
    if single_class && params.l2 <= 0.0 {
        return Err(ModelError::SingleClass);
    }

    let (means, stds, z) = standardize(dataset);
    let p = dataset.schema().len();
    let mut beta = DVector::<f64>::zeros(p + 1); // [intercept, weights...]
    let l2 = params.l2.max(0.0);

    let objective =
        |b: &DVector<f64>| penalized_nll(&z, &y, b[0], b.as_slice().split_first().unwrap().1, l2);
    let mut current = objective(&beta);
    let mut converged = false;
    let mut n_iter = 0;

    for iter in 0..params.max_iter {
        n_iter = iter + 1;
        let (g0, gw) = penalized_grad(
            &z,
            &y,
            beta[0],
            beta.as_slice().split_first().unwrap().1,
            l2,
        );
        let mut grad = DVector::<f64>::zeros(p + 1);
        grad[0] = g0;
        for (j, gj) in gw.iter().enumerate() {
            grad[j + 1] = *gj;
        }

        // Hessian: X' W X + l2 * I over the design with intercept column.
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        for (zi, _) in z.iter().zip(&y) {
            let s = beta[0] + dot(beta.as_slice().split_first().unwrap().1, zi);
            let mu = sigmoid(s);
            let w = (mu * (1.0 - mu)).max(1e-12);
            hess[(0, 0)] += w;
            for (j, &zij) in zi.iter().enumerate() {
                hess[(0, j + 1)] += w * zij;
                for (k, &zik) in zi.iter().enumerate().skip(j) {
                    hess[(j + 1, k + 1)] += w * zij * zik;
                }
            }
        }
        for j in 0..=p {
            for k in (j + 1)..=p {
                let v = hess[(j, k)];
                hess[(k, j)] = v;
            }
            hess[(j, j)] += l2;
        }

        let step = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => hess.lu().solve(&grad).ok_or(ModelError::Degenerate)?,
        };

        // Backtracking keeps full Newton steps from overshooting on nearly
        // separable data.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta - scale * &step;
            let value = objective(&candidate);
            if value.is_finite() && value <= current {
                let max_update = (scale * step.amax()).abs();
                beta = candidate;
                current = value;
                accepted = true;
                if max_update < params.tol {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted || converged {
            converged = converged || !accepted && grad.amax() < 1e-6;
            break;
        }
    }

    if beta.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Degenerate);
    }

    Ok(LogisticModel {
        feature_names: dataset.schema().names().to_vec(),
        schema_hash: dataset.schema().schema_hash(),
        target,
        means,
        stds,
        intercept: beta[0],
        weights: beta.as_slice()[1..].to_vec(),
        l2,
        converged,
        n_iter,
    })
}

impl LogisticModel {
    /// Probability for one raw (unstandardized) feature vector.
    pub fn predict_row(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.weights.len() {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found: format!("{}-column row", features.len()),
            });
        }
        let z = standardize_row(features, &self.means, &self.stds);
        let s = self.intercept + dot(&self.weights, &z);
        Ok(sigmoid(s).clamp(1e-9, 1.0 - 1e-9))
    }

    /// Probabilities for every row; the dataset must carry the schema the
    /// model was fitted on.
    pub fn predict_proba(&self, dataset: &Dataset) -> Result<Vec<f64>, ModelError> {
        self.check_schema(dataset.schema())?;
        dataset
            .rows()
            .iter()
            .map(|r| self.predict_row(&r.features))
            .collect()
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        let found = schema.schema_hash();
        if found != self.schema_hash {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Coefficients mapped back to the raw feature scale, for inspection:
    /// (intercept, per-feature slopes).
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let mut intercept = self.intercept;
        let mut raw = Vec::with_capacity(self.weights.len());
        for ((w, m), s) in self.weights.iter().zip(&self.means).zip(&self.stds) {
            if *s > 0.0 {
                raw.push(w / s);
                intercept -= w * m / s;
            } else {
                raw.push(0.0);
            }
        }
        (intercept, raw)
    }

    #[cfg(test)]
    pub(crate) fn from_raw(feature_names: Vec<String>, intercept: f64, weights: Vec<f64>) -> Self {
        let n = feature_names.len();
        let schema = FeatureSchema::new(feature_names.clone()).unwrap();
        Self {
            feature_names,
            schema_hash: schema.schema_hash(),
            target: Target::Outcome,
            means: vec![0.0; n],
            stds: vec![1.0; n],
            intercept,
            weights,
            l2: 0.0,
            converged: true,
            n_iter: 0,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self).map_err(|e| {
            ModelError::Serde {
                path: path.display().to_string(),
                source: e,
            }
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| ModelError::Serde {
            path: path.display().to_string(),
            source: e,
        })
    }
}
