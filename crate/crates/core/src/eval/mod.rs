//! Leave-one-subject-out evaluation, window voting, group statistics and
//! report assembly.

mod report;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Activity, Dataset, Group};
use crate::dl::{cnn_predict, cnn_train, CnnSpec, DlError};
use crate::dsp::{segment, WindowBatch};
use crate::features::{feature_table, FeatureTable};
use crate::ml::{self, label_of, DesignMatrix, Hyperparameters, MlError, ModelKind, ProjectionKind};
use crate::seed;

pub use report::{format_accuracy, format_p, render_report, render_table2, render_table3, write_scatter_csv, RenderedReport, MIXED_EFFECTS_NOTE};
pub use stats::{group_stats, welch_from_summary, welch_ttest, FeatureStats, StatsBlock, Summary, TTest, STATS_COLUMNS, VARIANCE_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("statistics error: {0}")]
    Stats(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Dl(#[from] DlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CML-CF")]
    CmlCf,
    #[serde(rename = "CML-RAW")]
    CmlRaw,
    #[serde(rename = "DL-RAW")]
    DlRaw,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CmlCf, Method::CmlRaw, Method::DlRaw];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CmlCf => "CML-CF",
            Method::CmlRaw => "CML-RAW",
            Method::DlRaw => "DL-RAW",
        }
    }

    pub fn is_raw(self) -> bool {
        self != Method::CmlCf
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| EvalError::Config(format!("unknown method {s:?} (expected CML-CF, CML-RAW or DL-RAW)")))
    }
}

/// One leave-one-subject-out split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub held_out: String,
    pub train: Vec<String>,
    /// The training subjects all belong to one group.
    pub single_class_train: bool,
}

/// One fold per participant, in dataset order.
pub fn loo_split(dataset: &Dataset) -> Result<Vec<Fold>, EvalError> {
    let ps = &dataset.participants;
    if ps.len() < 2 {
        return Err(EvalError::Data(format!("leave-one-out needs at least 2 participants, got {}", ps.len())));
    }
    for g in Group::BOTH {
        if !ps.iter().any(|p| p.group == g) {
            return Err(EvalError::Data(format!("no {g} participants in dataset")));
        }
    }
    Ok(ps
        .iter()
        .enumerate()
        .map(|(index, held)| {
            let train: Vec<String> = ps.iter().filter(|p| p.id != held.id).map(|p| p.id.clone()).collect();
            let groups: BTreeSet<Group> = ps.iter().filter(|p| p.id != held.id).map(|p| p.group).collect();
            Fold {
                index,
                held_out: held.id.clone(),
                train,
                single_class_train: groups.len() < 2,
            }
        })
        .collect())
}

/// DMD when at least half the windows are DMD.
pub fn aggregate_votes(predictions: &[Group]) -> Result<Group, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Aggregation("no window predictions to aggregate".into()));
    }
    let dmd = predictions.iter().filter(|g| **g == Group::Dmd).count();
    Ok(votes_to_label(dmd, predictions.len()))
}

fn votes_to_label(dmd: usize, total: usize) -> Group {
    if 2 * dmd >= total {
        Group::Dmd
    } else {
        Group::Td
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldOutcome {
    Evaluated { predicted: Group },
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub truth: Group,
    /// `(dmd windows, total windows)` for raw methods.
    pub window_votes: Option<(usize, usize)>,
    pub outcome: FoldOutcome,
}

impl FoldResult {
    pub fn predicted(&self) -> Option<Group> {
        match self.outcome {
            FoldOutcome::Evaluated { predicted } => Some(predicted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub activity: Activity,
    pub method: Method,
    /// Classifier name (`RF`..`LR`, or `CNN`).
    pub model: String,
    pub projection: ProjectionKind,
    pub window_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub folds: Vec<FoldResult>,
}

impl CellResult {
    pub fn evaluated(&self) -> usize {
        self.folds.iter().filter(|f| f.predicted().is_some()).count()
    }

    pub fn correct(&self) -> usize {
        self.folds.iter().filter(|f| f.predicted() == Some(f.truth)).count()
    }

    /// Percent correct over evaluated folds; `None` when nothing was
    /// evaluated.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.evaluated();
        (n > 0).then(|| self.correct() as f64 / n as f64 * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Required for the classical methods; ignored for DL-RAW.
    pub model: Option<ModelKind>,
    pub projection: ProjectionKind,
    pub window_len: Option<usize>,
    pub seed: u64,
    pub hyper: Hyperparameters,
    pub cnn_epochs: usize,
    /// Empty means every activity present in the dataset.
    pub activities: Vec<Activity>,
}

impl ExperimentConfig {
    pub fn new(method: Method, model: Option<ModelKind>, window_len: Option<usize>, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            method,
            model,
            projection: ProjectionKind::None,
            window_len,
            seed,
            hyper: Hyperparameters::default(),
            cnn_epochs: CnnSpec::new(10).epochs,
            activities: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.method.is_raw() {
            match self.window_len {
                None => {
                    return Err(EvalError::Config(format!(
                        "{} requires a window length (--tw)",
                        self.method
                    )))
                }
                Some(len) if !crate::dsp::WINDOW_LENGTHS.contains(&len) => {
                    return Err(EvalError::Config(format!(
                        "window length {len} is not one of {:?}",
                        crate::dsp::WINDOW_LENGTHS
                    )))
                }
                Some(_) => {}
            }
        } else if self.window_len.is_some() {
            return Err(EvalError::Config("CML-CF does not take a window length".into()));
        }
        match self.method {
            Method::DlRaw if self.projection != ProjectionKind::None => {
                Err(EvalError::Config("DL-RAW does not take a projection".into()))
            }
            Method::CmlCf | Method::CmlRaw if self.model.is_none() => {
                Err(EvalError::Config(format!("{} requires a model kind", self.method)))
            }
            Method::DlRaw if self.cnn_epochs == 0 => Err(EvalError::Config("cnn_epochs must be >= 1".into())),
            _ => self.hyper.validate().map_err(EvalError::from),
        }
    }

    pub fn model_name(&self) -> String {
        match (self.method, self.model) {
            (Method::DlRaw, _) => "CNN".into(),
            (_, Some(m)) => m.as_str().into(),
            (_, None) => "?".into(),
        }
    }
}

/// Per-subject inputs of one activity: rows (CF) or windows (raw).
enum SubjectData {
    Rows(Vec<Vec<f64>>),
    Windows(Vec<Vec<[f64; 3]>>),
}

impl SubjectData {
    fn len(&self) -> usize {
        match self {
            SubjectData::Rows(r) => r.len(),
            SubjectData::Windows(w) => w.len(),
        }
    }
}

fn cf_inputs(table: &FeatureTable, activity: Activity) -> BTreeMap<String, SubjectData> {
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for row in table.rows_of(activity) {
        out.entry(row.participant_id.clone())
            .or_default()
            .push(row.extraction.features.reported().to_vec());
    }
    out.into_iter().map(|(k, v)| (k, SubjectData::Rows(v))).collect()
}

fn window_inputs(dataset: &Dataset, activity: Activity, window_len: usize) -> Result<BTreeMap<String, SubjectData>, EvalError> {
    let mut out: BTreeMap<String, WindowBatch> = BTreeMap::new();
    for rec in dataset.recordings_of(activity) {
        let batch = segment(rec, window_len).map_err(|e| EvalError::Data(format!("{}: {e}", rec.label())))?;
        out.entry(rec.participant_id().to_string())
            .or_insert_with(|| WindowBatch::empty(window_len))
            .append(batch);
    }
    Ok(out.into_iter().map(|(k, b)| (k, SubjectData::Windows(b.windows))).collect())
}

fn run_fold(
    config: &ExperimentConfig,
    dataset: &Dataset,
    fold: &Fold,
    inputs: &BTreeMap<String, SubjectData>,
    activity: Activity,
) -> FoldResult {
    let truth = dataset.participant(&fold.held_out).expect("fold ids come from the dataset").group;
    let mut result = FoldResult {
        held_out: fold.held_out.clone(),
        truth,
        window_votes: None,
        outcome: FoldOutcome::Skipped { reason: String::new() },
    };
    let skip = |mut r: FoldResult, reason: String| {
        r.outcome = FoldOutcome::Skipped { reason };
        r
    };
    if fold.single_class_train {
        return skip(result, "single-class training set".into());
    }
    let Some(test) = inputs.get(&fold.held_out).filter(|d| d.len() > 0) else {
        return skip(result, format!("no {activity} inputs for held-out subject"));
    };

    // leakage guard: training inputs come only from the fold's training ids
    assert!(!fold.train.contains(&fold.held_out), "held-out subject in training set");
    let mut train_groups = BTreeSet::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut windows: Vec<Vec<[f64; 3]>> = Vec::new();
    for id in &fold.train {
        let Some(data) = inputs.get(id) else { continue };
        let g = dataset.participant(id).expect("fold ids come from the dataset").group;
        match data {
            SubjectData::Rows(r) => rows.extend(r.iter().cloned()),
            SubjectData::Windows(w) => windows.extend(w.iter().cloned()),
        }
        labels.extend(std::iter::repeat_n(g, data.len()));
        ids.extend(std::iter::repeat_n(id.clone(), data.len()));
        if data.len() > 0 {
            train_groups.insert(g);
        }
    }
    if train_groups.len() < 2 {
        return skip(result, "training inputs cover only one class".into());
    }

    let model_tag = seed::tag(&config.model_name());
    let fold_seed = seed::derive(
        config.seed,
        &[seed::tag(activity.as_str()), seed::tag(config.method.as_str()), model_tag, fold.index as u64],
    );
    let scores: Result<Vec<[f64; 2]>, EvalError> = match (config.method, test) {
        (Method::DlRaw, SubjectData::Windows(test_windows)) => {
            let mut spec = CnnSpec::new(config.window_len.expect("validated"));
            spec.epochs = config.cnn_epochs;
            cnn_train(&spec, &windows, &labels, fold_seed)
                .and_then(|m| cnn_predict(&m, test_windows))
                .map_err(EvalError::from)
        }
        (_, test_data) => {
            let (train_rows, test_rows) = match test_data {
                SubjectData::Rows(r) => (rows, r.clone()),
                SubjectData::Windows(w) => (
                    flatten(&windows),
                    flatten(w),
                ),
            };
            let d = test_rows[0].len();
            let names = (0..d).map(|j| format!("c{j}")).collect();
            DesignMatrix::new(train_rows, labels, ids, names)
                .and_then(|m| ml::train(config.model.expect("validated"), config.projection, &m, &config.hyper, fold_seed))
                .and_then(|model| ml::predict_proba(&model, &test_rows))
                .map_err(EvalError::from)
        }
    };
    match scores {
        Ok(scores) => {
            let dmd = scores.iter().filter(|s| label_of(**s) == Group::Dmd).count();
            if config.method.is_raw() {
                result.window_votes = Some((dmd, scores.len()));
            }
            result.outcome = FoldOutcome::Evaluated {
                predicted: votes_to_label(dmd, scores.len()),
            };
        }
        Err(e) => result.outcome = FoldOutcome::Failed { error: e.to_string() },
    }
    result
}

fn flatten(windows: &[Vec<[f64; 3]>]) -> Vec<Vec<f64>> {
    windows.iter().map(|w| w.iter().flatten().copied().collect()).collect()
}

/// Runs one configuration over every requested activity.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<Vec<CellResult>, EvalError> {
    let table = (!config.method.is_raw()).then(|| feature_table(dataset));
    run_experiment_with(dataset, table.as_ref(), config)
}

/// As [`run_experiment`], reusing an already extracted feature table for
/// CML-CF.
pub fn run_experiment_with(dataset: &Dataset, table: Option<&FeatureTable>, config: &ExperimentConfig) -> Result<Vec<CellResult>, EvalError> {
    config.validate()?;
    let folds = loo_split(dataset)?;
    let activities = if config.activities.is_empty() {
        dataset.activities()
    } else {
        config.activities.clone()
    };
    let owned;
    let table = match (config.method, table) {
        (Method::CmlCf, Some(t)) => Some(t),
        (Method::CmlCf, None) => {
            owned = feature_table(dataset);
            Some(&owned)
        }
        _ => None,
    };
    let mut cells = Vec::with_capacity(activities.len());
    for activity in activities {
        let inputs = match table {
            Some(t) => cf_inputs(t, activity),
            None => window_inputs(dataset, activity, config.window_len.expect("validated"))?,
        };
        if inputs.is_empty() {
            continue;
        }
        let fold_results: Vec<FoldResult> = folds
            .par_iter()
            .map(|f| run_fold(config, dataset, f, &inputs, activity))
            .collect();
        cells.push(CellResult {
            key: CellKey {
                activity,
                method: config.method,
                model: config.model_name(),
                projection: config.projection,
                window_len: config.window_len,
            },
            folds: fold_results,
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by key.
    pub cells: Vec<CellResult>,
    pub group_stats: Vec<StatsBlock>,
}

impl EvalReport {
    pub fn new(mut cells: Vec<CellResult>, group_stats: Vec<StatsBlock>) -> EvalReport {
        cells.sort_by(|a, b| a.key.cmp(&b.key));
        EvalReport { cells, group_stats }
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.cells.extend(other.cells);
        self.cells.sort_by(|a, b| a.key.cmp(&b.key));
        if self.group_stats.is_empty() {
            self.group_stats = other.group_stats;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty() && self.group_stats.is_empty()
    }
}
