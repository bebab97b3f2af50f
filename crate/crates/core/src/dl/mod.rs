//! 1-D CNN over raw triaxial windows.
//!
//! conv(16, k5, same) -> ReLU -> maxpool(2) -> conv(32, k5, same) -> ReLU
//! -> global average pool -> dense(2) -> softmax, trained with Adam on mean
//! cross-entropy in double precision.

mod net;

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::data::Group;
pub use net::{Layout, Tensor, CLASSES, IN_CHANNELS};
use net::Workspace;

#[derive(Debug, thiserror::Error)]
pub enum DlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("numeric error at epoch {epoch}: {message}")]
    Numeric { epoch: usize, message: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub window_len: usize,
    pub filters1: usize,
    pub filters2: usize,
    pub kernel: usize,
    pub pool: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl CnnSpec {
    pub fn new(window_len: usize) -> CnnSpec {
        CnnSpec {
            window_len,
            filters1: 16,
            filters2: 32,
            kernel: 5,
            pool: 2,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            window_len: self.window_len,
            filters1: self.filters1,
            filters2: self.filters2,
            kernel: self.kernel,
            pool: self.pool,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().n_params()
    }

    pub fn validate(&self) -> Result<(), DlError> {
        let bad = |m: String| Err(DlError::Config(m));
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.pool == 0 || self.window_len / self.pool.max(1) == 0 {
            return bad(format!("window_len {} too short for pool {}", self.window_len, self.pool));
        }
        if self.filters1 == 0 || self.filters2 == 0 || self.batch_size == 0 {
            return bad("filters and batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Per-axis z-scoring fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisNormalizer {
    pub mean: [f64; 3],
    /// 0 marks a constant axis, which maps to 0.
    pub scale: [f64; 3],
}

impl AxisNormalizer {
    pub fn fit(windows: &[Vec<[f64; 3]>]) -> AxisNormalizer {
        let n = windows.iter().map(Vec::len).sum::<usize>().max(1) as f64;
        let mut mean = [0.0; 3];
        for s in windows.iter().flatten() {
            for a in 0..3 {
                mean[a] += s[a];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 3];
        for s in windows.iter().flatten() {
            for a in 0..3 {
                var[a] += (s[a] - mean[a]).powi(2);
            }
        }
        AxisNormalizer {
            mean,
            scale: var.map(|v| (v / n).sqrt()),
        }
    }

    pub fn identity() -> AxisNormalizer {
        AxisNormalizer {
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }

    /// Channel-major normalized copy of one window.
    pub fn apply(&self, window: &[[f64; 3]]) -> Vec<f64> {
        let len = window.len();
        let mut out = vec![0.0; 3 * len];
        for (t, s) in window.iter().enumerate() {
            for a in 0..3 {
                out[a * len + t] = if self.scale[a] > 0.0 {
                    (s[a] - self.mean[a]) / self.scale[a]
                } else {
                    0.0
                };
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub spec: CnnSpec,
    pub normalizer: AxisNormalizer,
    pub params: Vec<f64>,
    /// Mean training loss before training, then after each epoch.
    pub loss_history: Vec<f64>,
}

fn class_index(g: Group) -> usize {
    g.index()
}

impl CnnModel {
    /// He-uniform weights from `seed`, zero biases, identity normalizer.
    pub fn init(spec: &CnnSpec, seed: u64) -> Result<CnnModel, DlError> {
        spec.validate()?;
        let l = spec.layout();
        let mut params = vec![0.0; l.n_params()];
        let mut rng = crate::seed::rng(seed, &[crate::seed::tag("cnn-init")]);
        for (start, end, fan_in) in l.weight_fans() {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(CnnModel {
            spec: spec.clone(),
            normalizer: AxisNormalizer::identity(),
            params,
            loss_history: Vec::new(),
        })
    }

    pub fn layout(&self) -> Layout {
        self.spec.layout()
    }

    fn check_windows(&self, windows: &[Vec<[f64; 3]>]) -> Result<(), DlError> {
        match windows.iter().position(|w| w.len() != self.spec.window_len) {
            Some(i) => Err(DlError::Shape(format!(
                "window {i} has {} samples, model expects {}",
                windows[i].len(),
                self.spec.window_len
            ))),
            None => Ok(()),
        }
    }

    /// Mean cross-entropy on already-normalized inputs.
    fn mean_loss(&self, params: &[f64], inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let l = self.layout();
        let mut ws = Workspace::new(&l);
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            net::forward(&l, params, x, &mut ws);
            total -= ws.probs[y].max(f64::MIN_POSITIVE).ln();
        }
        total / inputs.len() as f64
    }

    /// Mean loss and its gradient on already-normalized inputs.
    fn loss_and_gradient(&self, params: &[f64], inputs: &[&Vec<f64>], labels: &[usize], ws: &mut Workspace) -> (f64, Vec<f64>) {
        let l = self.layout();
        let scale = 1.0 / inputs.len() as f64;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            total += net::backward(&l, params, x, y, scale, &mut grad, ws);
        }
        (total * scale, grad)
    }

    /// Mean training cross-entropy of raw `windows`.
    pub fn loss(&self, windows: &[Vec<[f64; 3]>], labels: &[Group]) -> Result<f64, DlError> {
        self.check_windows(windows)?;
        let inputs: Vec<Vec<f64>> = windows.iter().map(|w| self.normalizer.apply(w)).collect();
        let y: Vec<usize> = labels.iter().map(|g| class_index(*g)).collect();
        Ok(self.mean_loss(&self.params, &inputs, &y))
    }

    /// Writes `<stem>.json` (spec, normalizer, history, tensor manifest) and
    /// `<stem>.bin` (little-endian f64 parameters).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), DlError> {
        let err = |p: &Path, e: &dyn std::fmt::Display| DlError::Checkpoint {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let bin_name = format!("{stem}.bin");
        let header = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            spec: self.spec.clone(),
            normalizer: self.normalizer.clone(),
            loss_history: self.loss_history.clone(),
            tensors: self.layout().tensors(),
            n_params: self.params.len(),
            blob: bin_name.clone(),
        };
        let mut blob = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            blob.write_all(&p.to_le_bytes()).expect("vec write");
        }
        let bin_path = dir.join(&bin_name);
        write_atomic(&bin_path, &blob).map_err(|e| err(&bin_path, &e))?;
        let json_path = dir.join(format!("{stem}.json"));
        let mut text = serde_json::to_string_pretty(&header).expect("checkpoint serializes");
        text.push('\n');
        write_atomic(&json_path, text.as_bytes()).map_err(|e| err(&json_path, &e))
    }

    pub fn load(json_path: &Path) -> Result<CnnModel, DlError> {
        let err = |p: &Path, m: String| DlError::Checkpoint {
            path: p.display().to_string(),
            message: m,
        };
        let text = std::fs::read_to_string(json_path).map_err(|e| err(json_path, e.to_string()))?;
        let header: Checkpoint = serde_json::from_str(&text).map_err(|e| err(json_path, e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(err(json_path, format!("unknown format {:?}", header.format)));
        }
        if header.tensors != header.spec.layout().tensors() || header.n_params != header.spec.n_params() {
            return Err(err(json_path, "tensor manifest does not match spec".into()));
        }
        let bin_path = json_path.parent().unwrap_or(Path::new(".")).join(&header.blob);
        let blob = std::fs::read(&bin_path).map_err(|e| err(&bin_path, e.to_string()))?;
        if blob.len() != header.n_params * 8 {
            return Err(err(&bin_path, format!("expected {} bytes, found {}", header.n_params * 8, blob.len())));
        }
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(CnnModel {
            spec: header.spec,
            normalizer: header.normalizer,
            params,
            loss_history: header.loss_history,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "gaitlab-cnn/1";

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    spec: CnnSpec,
    normalizer: AxisNormalizer,
    loss_history: Vec<f64>,
    tensors: Vec<Tensor>,
    n_params: usize,
    blob: String,
}

/// Trains from a seeded initialization. Single-threaded and deterministic
/// given `seed`.
pub fn cnn_train(spec: &CnnSpec, windows: &[Vec<[f64; 3]>], labels: &[Group], seed: u64) -> Result<CnnModel, DlError> {
    spec.validate()?;
    if windows.len() != labels.len() {
        return Err(DlError::Config(format!("{} windows but {} labels", windows.len(), labels.len())));
    }
    let mut model = CnnModel::init(spec, seed)?;
    model.check_windows(windows).map_err(|e| DlError::Config(e.to_string()))?;
    let dmd = labels.iter().filter(|g| **g == Group::Dmd).count();
    if dmd == 0 || dmd == labels.len() {
        return Err(DlError::Training(format!(
            "need windows of both classes, got {dmd} DMD of {}",
            labels.len()
        )));
    }

    model.normalizer = AxisNormalizer::fit(windows);
    let inputs: Vec<Vec<f64>> = windows.iter().map(|w| model.normalizer.apply(w)).collect();
    let y: Vec<usize> = labels.iter().map(|g| class_index(*g)).collect();

    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let n_params = model.params.len();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0i32;
    let mut rng = crate::seed::rng(seed, &[crate::seed::tag("cnn-shuffle")]);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut ws = Workspace::new(&model.layout());

    let initial = model.mean_loss(&model.params, &inputs, &y);
    if !initial.is_finite() {
        return Err(DlError::Numeric {
            epoch: 0,
            message: format!("initial loss is {initial}"),
        });
    }
    model.loss_history.push(initial);

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            let xs: Vec<&Vec<f64>> = batch.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&model.params, &xs, &ys, &mut ws);
            if !loss.is_finite() {
                return Err(DlError::Numeric {
                    epoch,
                    message: format!("batch loss is {loss}"),
                });
            }
            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for i in 0..n_params {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                model.params[i] -= spec.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        let loss = model.mean_loss(&model.params, &inputs, &y);
        if !loss.is_finite() {
            return Err(DlError::Numeric {
                epoch,
                message: format!("training loss is {loss}"),
            });
        }
        model.loss_history.push(loss);
        log::debug!("cnn epoch {epoch}: loss {loss:.6}");
    }
    Ok(model)
}

/// Per-window `[p_dmd, p_td]`.
pub fn cnn_predict(model: &CnnModel, windows: &[Vec<[f64; 3]>]) -> Result<Vec<[f64; 2]>, DlError> {
    model.check_windows(windows)?;
    let l = model.layout();
    let mut ws = Workspace::new(&l);
    Ok(windows
        .iter()
        .map(|w| {
            net::forward(&l, &model.params, &model.normalizer.apply(w), &mut ws);
            ws.probs
        })
        .collect())
}

/// Largest relative error between the backpropagated gradient and central
/// differences (step `h`) over `n_checked` randomly chosen parameters.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`, so parameters with a
/// vanishing gradient are compared absolutely.
pub fn cnn_gradcheck(
    model: &CnnModel,
    windows: &[Vec<[f64; 3]>],
    labels: &[Group],
    n_checked: usize,
    h: f64,
    seed: u64,
) -> Result<f64, DlError> {
    model.check_windows(windows)?;
    let inputs: Vec<Vec<f64>> = windows.iter().map(|w| model.normalizer.apply(w)).collect();
    let refs: Vec<&Vec<f64>> = inputs.iter().collect();
    let y: Vec<usize> = labels.iter().map(|g| class_index(*g)).collect();
    let mut ws = Workspace::new(&model.layout());
    let (_, grad) = model.loss_and_gradient(&model.params, &refs, &y, &mut ws);

    let mut indices: Vec<usize> = (0..model.params.len()).collect();
    let mut rng = crate::seed::rng(seed, &[crate::seed::tag("gradcheck")]);
    indices.shuffle(&mut rng);
    indices.truncate(n_checked.min(model.params.len()));

    let mut worst = 0.0f64;
    let mut probe = model.params.clone();
    for &i in &indices {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = model.mean_loss(&probe, &inputs, &y);
        probe[i] = orig - h;
        let down = model.mean_loss(&probe, &inputs, &y);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Runs `steps` plain gradient-descent steps; used to move the gradient
/// check away from the initialization.
pub fn sgd_steps(model: &mut CnnModel, windows: &[Vec<[f64; 3]>], labels: &[Group], steps: usize, lr: f64) -> Result<(), DlError> {
    model.check_windows(windows)?;
    let inputs: Vec<Vec<f64>> = windows.iter().map(|w| model.normalizer.apply(w)).collect();
    let refs: Vec<&Vec<f64>> = inputs.iter().collect();
    let y: Vec<usize> = labels.iter().map(|g| class_index(*g)).collect();
    let mut ws = Workspace::new(&model.layout());
    for _ in 0..steps {
        let (_, grad) = model.loss_and_gradient(&model.params, &refs, &y, &mut ws);
        for (p, g) in model.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }
    Ok(())
}
