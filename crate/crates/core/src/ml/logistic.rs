use serde::{Deserialize, Serialize};

use super::MlError;
use crate::data::Group;

/// Binary logistic regression; the positive class is DMD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// +1 for DMD, -1 for TD.
pub(crate) fn signed_labels(labels: &[Group]) -> Vec<f64> {
    labels
        .iter()
        .map(|g| if *g == Group::Dmd { 1.0 } else { -1.0 })
        .collect()
}

/// Mean log-loss plus `lambda / 2 * |w|^2` and its gradient.
///
/// `params` holds the weights followed by the (unregularized) bias.
pub fn loss_and_gradient(params: &[f64], rows: &[Vec<f64>], y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (x, &yi) in rows.iter().zip(y) {
        let z = x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        loss += softplus(-yi * z);
        // d/dz softplus(-y z) = -y * sigmoid(-y z)
        let g = -yi * sigmoid(-yi * z);
        for (gj, xj) in grad[..d].iter_mut().zip(x) {
            *gj += g * xj;
        }
        grad[d] += g;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    for (gj, wj) in grad[..d].iter_mut().zip(w) {
        *gj += lambda * wj;
    }
    (loss, grad)
}

impl LogisticRegression {
    /// Full-batch gradient descent with step `1 / L`, `L` an upper bound on
    /// the loss curvature.
    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[Group],
        lambda: f64,
        tolerance: f64,
        max_iter: usize,
    ) -> Result<LogisticRegression, MlError> {
        let d = rows[0].len();
        let y = signed_labels(labels);
        let n = rows.len() as f64;
        let mean_sq_norm = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
        let step = 1.0 / (0.25 * (mean_sq_norm + 1.0) + lambda);

        let mut params = vec![0.0; d + 1];
        let mut iterations = 0;
        for it in 0..max_iter {
            let (loss, grad) = loss_and_gradient(&params, rows, &y, lambda);
            if !loss.is_finite() {
                return Err(MlError::Numeric {
                    iteration: Some(it),
                    message: format!("logistic loss became {loss}"),
                });
            }
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            iterations = it;
            if gnorm < tolerance {
                break;
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
            iterations = it + 1;
        }
        let bias = params.pop().unwrap_or(0.0);
        Ok(LogisticRegression {
            weights: params,
            bias,
            iterations,
        })
    }

    pub fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        let z = x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.bias;
        let p = sigmoid(z);
        [p, 1.0 - p]
    }
}
