//! Classical classifiers over clinical features or flattened raw windows.
//!
//! A [`Model`] bundles everything fitted on the training rows: the optional
//! scaler, the optional projection and the estimator itself, so applying it
//! to new rows needs nothing else.

mod gnb;
mod knn;
mod logistic;
mod projection;
mod scaler;
mod svm;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Group;

pub use gnb::GaussianNb;
pub use knn::Knn;
pub use logistic::{loss_and_gradient, LogisticRegression};
pub use projection::{fisher_criterion, lda_fit, pca_fit, pca_fit_k, project, Projection, ProjectionKind};
pub use scaler::{standardize_apply, standardize_fit, Scaler};
pub use svm::{svm_objective, LinearSvm};
pub use tree::{DecisionTree, Node, RandomForest, TreeParams};

#[derive(Debug, thiserror::Error)]
pub enum MlError {
    #[error("training error: {0}")]
    Training(String),
    #[error("numeric error{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numeric { iteration: Option<usize>, message: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
}

/// Labelled rows; `groups` carries the subject id of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Group>,
    pub groups: Vec<String>,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Vec<Group>,
        groups: Vec<String>,
        column_names: Vec<String>,
    ) -> Result<DesignMatrix, MlError> {
        let n = rows.len();
        if labels.len() != n || groups.len() != n {
            return Err(MlError::Shape(format!(
                "{n} rows but {} labels and {} group ids",
                labels.len(),
                groups.len()
            )));
        }
        let d = column_names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(MlError::Shape(format!("row {i} has {} columns, expected {d}", r.len())));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(MlError::Data(format!("row {i} column {} is not finite", column_names[j])));
            }
        }
        Ok(DesignMatrix {
            rows,
            labels,
            groups,
            column_names,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.column_names.len()
    }

    pub fn rows_of(&self, group: Group) -> impl Iterator<Item = &Vec<f64>> + '_ {
        self.rows
            .iter()
            .zip(&self.labels)
            .filter(move |(_, g)| **g == group)
            .map(|(r, _)| r)
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let dmd = self.labels.iter().filter(|g| **g == Group::Dmd).count();
        [dmd, self.labels.len() - dmd]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DesignMatrix {
        DesignMatrix {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i].clone()).collect(),
            column_names: self.column_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "SVM")]
    Svm,
    #[serde(rename = "kNN")]
    Knn,
    #[serde(rename = "GNB")]
    Gnb,
    #[serde(rename = "LR")]
    Lr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Rf,
        ModelKind::Dt,
        ModelKind::Svm,
        ModelKind::Knn,
        ModelKind::Gnb,
        ModelKind::Lr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "RF",
            ModelKind::Dt => "DT",
            ModelKind::Svm => "SVM",
            ModelKind::Knn => "kNN",
            ModelKind::Gnb => "GNB",
            ModelKind::Lr => "LR",
        }
    }

    /// Whether the estimator sees standardized columns.
    pub fn needs_scaling(self) -> bool {
        matches!(self, ModelKind::Svm | ModelKind::Lr | ModelKind::Knn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = MlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| MlError::Data(format!("unknown model kind {s:?}")))
    }
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProjectionKind {
    type Err = MlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProjectionKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| MlError::Data(format!("unknown projection {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub knn_k: usize,
    pub tree_max_depth: Option<usize>,
    pub tree_min_split: usize,
    pub rf_trees: usize,
    /// `None` means `floor(sqrt(d))`, at least 1.
    pub rf_max_features: Option<usize>,
    pub rf_bootstrap: bool,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    pub svm_eta0: f64,
    pub lr_lambda: f64,
    pub lr_tolerance: f64,
    pub lr_max_iter: usize,
    pub gnb_var_floor: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            knn_k: 3,
            tree_max_depth: None,
            tree_min_split: 2,
            rf_trees: 100,
            rf_max_features: None,
            rf_bootstrap: true,
            svm_lambda: 1e-3,
            svm_epochs: 200,
            svm_eta0: 0.1,
            lr_lambda: 1e-4,
            lr_tolerance: 1e-6,
            lr_max_iter: 5000,
            gnb_var_floor: 1e-9,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), MlError> {
        let bad = |m: &str| Err(MlError::Data(format!("hyperparameter out of range: {m}")));
        if self.knn_k == 0 {
            return bad("knn_k must be >= 1");
        }
        if self.tree_min_split < 2 {
            return bad("tree_min_split must be >= 2");
        }
        if self.tree_max_depth == Some(0) {
            return bad("tree_max_depth must be >= 1");
        }
        if self.rf_trees == 0 {
            return bad("rf_trees must be >= 1");
        }
        if self.rf_max_features == Some(0) {
            return bad("rf_max_features must be >= 1");
        }
        if !(self.svm_lambda > 0.0) || !(self.svm_eta0 > 0.0) {
            return bad("svm_lambda and svm_eta0 must be > 0");
        }
        if !(self.lr_lambda >= 0.0) || !(self.lr_tolerance > 0.0) || self.lr_max_iter == 0 {
            return bad("lr_lambda >= 0, lr_tolerance > 0, lr_max_iter >= 1");
        }
        if !(self.gnb_var_floor > 0.0) {
            return bad("gnb_var_floor must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum Estimator {
    #[serde(rename = "RF")]
    Rf(RandomForest),
    #[serde(rename = "DT")]
    Dt(DecisionTree),
    #[serde(rename = "SVM")]
    Svm(LinearSvm),
    #[serde(rename = "kNN")]
    Knn(Knn),
    #[serde(rename = "GNB")]
    Gnb(GaussianNb),
    #[serde(rename = "LR")]
    Lr(LogisticRegression),
}

impl Estimator {
    fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        match self {
            Estimator::Rf(m) => m.scores_row(x),
            Estimator::Dt(m) => m.scores_row(x),
            Estimator::Svm(m) => m.scores_row(x),
            Estimator::Knn(m) => m.scores_row(x),
            Estimator::Gnb(m) => m.scores_row(x),
            Estimator::Lr(m) => m.scores_row(x),
        }
    }
}

/// A trained, immutable pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub projection_kind: ProjectionKind,
    pub hyper: Hyperparameters,
    pub n_features: usize,
    pub scaler: Option<Scaler>,
    pub projection: Option<Projection>,
    pub estimator: Estimator,
}

impl Model {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Model, MlError> {
        serde_json::from_str(s).map_err(|e| MlError::Data(format!("model JSON: {e}")))
    }

    fn prepare(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let scaled = match &self.scaler {
            Some(s) => s.transform(rows),
            None => rows.to_vec(),
        };
        match &self.projection {
            Some(p) => p.project(&scaled),
            None => scaled,
        }
    }
}

/// Fits `kind` on `train`, optionally behind a PCA2 or LDA1 projection.
pub fn train(
    kind: ModelKind,
    projection_kind: ProjectionKind,
    train: &DesignMatrix,
    hyper: &Hyperparameters,
    seed: u64,
) -> Result<Model, MlError> {
    hyper.validate()?;
    if train.len() < 2 {
        return Err(MlError::Training(format!("need at least 2 rows, got {}", train.len())));
    }
    let [dmd, td] = train.class_counts();
    if dmd == 0 || td == 0 {
        return Err(MlError::Training(format!(
            "single-class training set ({dmd} DMD, {td} TD)"
        )));
    }
    let d = train.dim();
    if d == 0 {
        return Err(MlError::Shape("training matrix has no columns".into()));
    }

    let scaler = (kind.needs_scaling() || projection_kind != ProjectionKind::None).then(|| Scaler::fit(&train.rows));
    let scaled = match &scaler {
        Some(s) => DesignMatrix {
            rows: s.transform(&train.rows),
            ..train.clone()
        },
        None => train.clone(),
    };
    let projection = match projection_kind {
        ProjectionKind::None => None,
        ProjectionKind::Pca2 => Some(pca_fit(&scaled)?),
        ProjectionKind::Lda1 => Some(lda_fit(&scaled)?),
    };
    let rows = match &projection {
        Some(p) => p.project(&scaled.rows),
        None => scaled.rows,
    };
    let labels = &train.labels;
    let tag = crate::seed::tag(kind.as_str());

    let estimator = match kind {
        ModelKind::Knn => Estimator::Knn(Knn::fit(hyper.knn_k, rows, labels.clone())),
        ModelKind::Gnb => Estimator::Gnb(GaussianNb::fit(&rows, labels, hyper.gnb_var_floor)),
        ModelKind::Lr => Estimator::Lr(LogisticRegression::fit(
            &rows,
            labels,
            hyper.lr_lambda,
            hyper.lr_tolerance,
            hyper.lr_max_iter,
        )?),
        ModelKind::Svm => {
            let mut rng = crate::seed::rng(seed, &[tag]);
            Estimator::Svm(LinearSvm::fit(
                &rows,
                labels,
                hyper.svm_lambda,
                hyper.svm_epochs,
                hyper.svm_eta0,
                &mut rng,
            )?)
        }
        ModelKind::Dt => {
            let params = TreeParams {
                max_depth: hyper.tree_max_depth,
                min_split: hyper.tree_min_split,
                max_features: None,
            };
            let sample: Vec<usize> = (0..rows.len()).collect();
            Estimator::Dt(DecisionTree::fit::<rand_chacha::ChaCha8Rng>(&rows, labels, &sample, params, None))
        }
        ModelKind::Rf => {
            let width = rows[0].len();
            let params = TreeParams {
                max_depth: hyper.tree_max_depth,
                min_split: hyper.tree_min_split,
                max_features: Some(
                    hyper
                        .rf_max_features
                        .unwrap_or(((width as f64).sqrt().floor() as usize).max(1))
                        .min(width),
                ),
            };
            Estimator::Rf(RandomForest::fit(
                &rows,
                labels,
                hyper.rf_trees,
                params,
                hyper.rf_bootstrap,
                crate::seed::derive(seed, &[tag]),
            ))
        }
    };

    Ok(Model {
        kind,
        projection_kind,
        hyper: hyper.clone(),
        n_features: d,
        scaler,
        projection,
        estimator,
    })
}

/// Per-row `[p_dmd, p_td]`. For SVM the values are a monotone squash of the
/// margin rather than calibrated probabilities.
pub fn predict_proba(model: &Model, rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, MlError> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != model.n_features) {
        return Err(MlError::Shape(format!(
            "row {i} has {} columns, model expects {}",
            r.len(),
            model.n_features
        )));
    }
    let prepared = model.prepare(rows);
    Ok(prepared.iter().map(|r| model.estimator.scores_row(r)).collect())
}

/// Argmax of the scores; ties go to DMD.
pub fn label_of(scores: [f64; 2]) -> Group {
    if scores[0] >= scores[1] {
        Group::Dmd
    } else {
        Group::Td
    }
}

pub fn predict(model: &Model, rows: &[Vec<f64>]) -> Result<Vec<Group>, MlError> {
    Ok(predict_proba(model, rows)?.into_iter().map(label_of).collect())
}

pub fn accuracy(predicted: &[Group], truth: &[Group]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
