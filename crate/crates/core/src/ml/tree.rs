use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Group;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        p_dmd: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART classification tree, Gini impurity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_split: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

struct Builder<'a, R> {
    rows: &'a [Vec<f64>],
    is_dmd: Vec<bool>,
    params: TreeParams,
    rng: Option<&'a mut R>,
    nodes: Vec<Node>,
    d: usize,
}

fn gini_weighted(n: usize, dmd: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = dmd as f64 / n as f64;
    n as f64 * (1.0 - p * p - (1.0 - p) * (1.0 - p))
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let dmd = idx.iter().filter(|&&i| self.is_dmd[i]).count();
        self.nodes.push(Node::Leaf {
            p_dmd: dmd as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best `(weighted child impurity, threshold)` on one feature.
    fn best_split_on(&self, idx: &mut [usize], feature: usize) -> Option<(f64, f64)> {
        let rows = self.rows;
        idx.sort_by(|&a, &b| rows[a][feature].total_cmp(&rows[b][feature]).then(a.cmp(&b)));
        let n = idx.len();
        let total_dmd = idx.iter().filter(|&&i| self.is_dmd[i]).count();
        let mut left_dmd = 0;
        let mut best: Option<(f64, f64)> = None;
        for k in 1..n {
            if self.is_dmd[idx[k - 1]] {
                left_dmd += 1;
            }
            let lo = rows[idx[k - 1]][feature];
            let hi = rows[idx[k]][feature];
            if lo == hi {
                continue;
            }
            let impurity = gini_weighted(k, left_dmd) + gini_weighted(n - k, total_dmd - left_dmd);
            if best.is_none_or(|(b, _)| impurity < b) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some((impurity, threshold));
            }
        }
        best
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let mut features: Vec<usize> = (0..self.d).collect();
        if let (Some(rng), Some(_)) = (self.rng.as_deref_mut(), self.params.max_features) {
            // full shuffle: the first max_features are the sample, the rest
            // are fallbacks when none of those admits a split
            for i in (1..features.len()).rev() {
                let j = rng.random_range(0..=i);
                features.swap(i, j);
            }
        }
        features
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let dmd = idx.iter().filter(|&&i| self.is_dmd[i]).count();
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if dmd == 0 || dmd == n || n < self.params.min_split.max(2) || !depth_ok {
            return self.leaf(idx);
        }

        let features = self.candidate_features();
        let budget = self.params.max_features.unwrap_or(self.d).clamp(1, self.d);
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= budget && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_split_on(idx, f) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };

        let rows = self.rows;
        idx.sort_by(|&a, &b| {
            let la = rows[a][feature] <= threshold;
            let lb = rows[b][feature] <= threshold;
            lb.cmp(&la).then(a.cmp(&b))
        });
        let split_at = idx.iter().take_while(|&&i| rows[i][feature] <= threshold).count();

        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p_dmd: 0.0 });
        let (l, r) = idx.split_at_mut(split_at);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

impl DecisionTree {
    /// Fits on the rows listed in `sample` (duplicates allowed, as produced
    /// by bootstrapping). `rng` is only consulted when `max_features` is set.
    pub fn fit<R: Rng>(
        rows: &[Vec<f64>],
        labels: &[Group],
        sample: &[usize],
        params: TreeParams,
        rng: Option<&mut R>,
    ) -> DecisionTree {
        let mut builder = Builder {
            rows,
            is_dmd: labels.iter().map(|g| *g == Group::Dmd).collect(),
            params,
            rng,
            nodes: Vec::new(),
            d: rows[0].len(),
        };
        let mut idx = sample.to_vec();
        builder.build(&mut idx, 0);
        DecisionTree {
            nodes: builder.nodes,
        }
    }

    pub fn p_dmd(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p_dmd } => return *p_dmd,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        let p = self.p_dmd(x);
        [p, 1.0 - p]
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Bagged CART trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[Group],
        n_trees: usize,
        params: TreeParams,
        bootstrap: bool,
        seed: u64,
    ) -> RandomForest {
        let n = rows.len();
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = crate::seed::rng(seed, &[crate::seed::tag("tree"), t as u64]);
                let sample: Vec<usize> = if bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(rows, labels, &sample, params, Some(&mut rng))
            })
            .collect();
        RandomForest { trees }
    }

    pub fn scores_row(&self, x: &[f64]) -> [f64; 2] {
        let p = self.trees.iter().map(|t| t.p_dmd(x)).sum::<f64>() / self.trees.len() as f64;
        [p, 1.0 - p]
    }
}
