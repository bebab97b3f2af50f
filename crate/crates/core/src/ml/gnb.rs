use serde::{Deserialize, Serialize};

use crate::data::Group;

/// Per-feature Gaussian class conditionals with empirical priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Indexed by class: DMD then TD.
    pub log_prior: [f64; 2],
    pub mean: [Vec<f64>; 2],
    pub var: [Vec<f64>; 2],
}

impl GaussianNb {
    /// Both classes must be present.
    pub fn fit(rows: &[Vec<f64>], labels: &[Group], var_floor: f64) -> GaussianNb {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut count = [0usize; 2];
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        for (r, g) in rows.iter().zip(labels) {
            let c = g.index();
            count[c] += 1;
            for (m, v) in mean[c].iter_mut().zip(r) {
                *m += v;
            }
        }
        for c in 0..2 {
            mean[c].iter_mut().for_each(|m| *m /= count[c] as f64);
        }
        let mut var = [vec![0.0; d], vec![0.0; d]];
        for (r, g) in rows.iter().zip(labels) {
            let c = g.index();
            for ((s, v), m) in var[c].iter_mut().zip(r).zip(&mean[c]) {
                *s += (v - m) * (v - m);
            }
        }
        for c in 0..2 {
            var[c]
                .iter_mut()
                .for_each(|s| *s = (*s / count[c] as f64).max(var_floor));
        }
        GaussianNb {
            log_prior: [(count[0] as f64 / n).ln(), (count[1] as f64 / n).ln()],
            mean,
            var,
        }
    }

    fn log_joint(&self, c: usize, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.log_prior[c]
            + x.iter()
                .zip(self.mean[c].iter().zip(&self.var[c]))
                .map(|(v, (m, s))| -0.5 * (ln_2pi + s.ln()) - (v - m) * (v - m) / (2.0 * s))
                .sum::<f64>()
    }

    pub fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        let l0 = self.log_joint(0, x);
        let l1 = self.log_joint(1, x);
        let top = l0.max(l1);
        let (e0, e1) = ((l0 - top).exp(), (l1 - top).exp());
        let z = e0 + e1;
        [e0 / z, e1 / z]
    }
}
