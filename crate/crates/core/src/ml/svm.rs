use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logistic::{signed_labels, sigmoid};
use super::MlError;
use crate::data::Group;

/// Linear SVM trained on hinge loss with L2 regularization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective after each epoch (index 0 is the initial point).
    pub objective_history: Vec<f64>,
}

/// `lambda / 2 * |w|^2 + mean(max(0, 1 - y (w.x + b)))`.
pub fn svm_objective(weights: &[f64], bias: f64, rows: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = rows
        .iter()
        .zip(y)
        .map(|(x, yi)| {
            let m = yi * (x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + bias);
            (1.0 - m).max(0.0)
        })
        .sum();
    0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>() + hinge / rows.len() as f64
}

impl LinearSvm {
    /// Stochastic subgradient descent, one seeded shuffle per epoch, with a
    /// decaying step `eta0 / (1 + eta0 * lambda * t)`.
    ///
    /// An epoch that raises the full objective is rolled back and the base
    /// step halved, so the recorded objective never increases.
    pub fn fit<R: rand::Rng>(
        rows: &[Vec<f64>],
        labels: &[Group],
        lambda: f64,
        epochs: usize,
        eta0: f64,
        rng: &mut R,
    ) -> Result<LinearSvm, MlError> {
        let d = rows[0].len();
        let y = signed_labels(labels);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut best = svm_objective(&w, b, rows, &y, lambda);
        let mut history = vec![best];
        let mut eta_base = eta0;
        let mut t = 0usize;
        let mut order: Vec<usize> = (0..rows.len()).collect();

        for epoch in 0..epochs {
            order.shuffle(rng);
            let (mut w_new, mut b_new) = (w.clone(), b);
            let mut t_new = t;
            for &i in &order {
                t_new += 1;
                let eta = eta_base / (1.0 + eta_base * lambda * t_new as f64);
                let x = &rows[i];
                let margin = y[i] * (x.iter().zip(&w_new).map(|(a, c)| a * c).sum::<f64>() + b_new);
                let shrink = 1.0 - eta * lambda;
                w_new.iter_mut().for_each(|c| *c *= shrink);
                if margin < 1.0 {
                    for (c, a) in w_new.iter_mut().zip(x) {
                        *c += eta * y[i] * a;
                    }
                    b_new += eta * y[i];
                }
            }
            let obj = svm_objective(&w_new, b_new, rows, &y, lambda);
            if !obj.is_finite() {
                return Err(MlError::Numeric {
                    iteration: Some(epoch),
                    message: format!("SVM objective became {obj}"),
                });
            }
            if obj <= best {
                w = w_new;
                b = b_new;
                t = t_new;
                best = obj;
            } else {
                eta_base *= 0.5;
            }
            history.push(best);
        }
        Ok(LinearSvm {
            weights: w,
            bias: b,
            objective_history: history,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.bias
    }

    /// Logistic squash of the margin; only the ordering is meaningful.
    pub fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        let m = self.decision(x);
        if m == 0.0 {
            return [0.5, 0.5];
        }
        let p = sigmoid(m);
        [p, 1.0 - p]
    }
}
