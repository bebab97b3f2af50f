use serde::{Deserialize, Serialize};

use crate::data::Group;

/// Euclidean k-nearest-neighbours; scores are neighbour vote fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Group>,
}

impl Knn {
    pub fn fit(k: usize, rows: Vec<Vec<f64>>, labels: Vec<Group>) -> Knn {
        Knn {
            k: k.clamp(1, rows.len().max(1)),
            rows,
            labels,
        }
    }

    pub fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(dist.len());
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_distance);
        }
        let dmd = dist[..k]
            .iter()
            .filter(|(_, i)| self.labels[*i] == Group::Dmd)
            .count();
        let p = dmd as f64 / k as f64;
        [p, 1.0 - p]
    }
}
