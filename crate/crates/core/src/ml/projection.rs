use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{DesignMatrix, MlError};
use crate::data::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProjectionKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "PCA2")]
    Pca2,
    #[serde(rename = "LDA1")]
    Lda1,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 3] = [ProjectionKind::None, ProjectionKind::Pca2, ProjectionKind::Lda1];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionKind::None => "none",
            ProjectionKind::Pca2 => "PCA2",
            ProjectionKind::Lda1 => "LDA1",
        }
    }
}

/// Linear map `x -> basis^T (x - mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub mean: Vec<f64>,
    /// `k` unit vectors of length `d`.
    pub basis: Vec<Vec<f64>>,
    /// Eigenvalue shares of the retained components (PCA only).
    pub explained: Vec<f64>,
}

impl Projection {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn project(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.project_row(r)).collect()
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct_row(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, b) in coords.iter().zip(&self.basis) {
            for (o, w) in out.iter_mut().zip(b) {
                *o += c * w;
            }
        }
        out
    }
}

fn column_mean(rows: &[&Vec<f64>], d: usize) -> DVector<f64> {
    let mut m = DVector::zeros(d);
    for r in rows {
        for j in 0..d {
            m[j] += r[j];
        }
    }
    m / rows.len() as f64
}

fn scatter(rows: &[&Vec<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut s = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_iterator(d, r.iter().zip(mean.iter()).map(|(x, m)| x - m));
        s.ger(1.0, &c, &c, 1.0);
    }
    s
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` principal components of the training rows.
pub fn pca_fit_k(rows: &[Vec<f64>], k: usize) -> Result<Projection, MlError> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n < 3 || d < 2 {
        return Err(MlError::Data(format!("PCA needs n >= 3 and d >= 2, got n={n}, d={d}")));
    }
    if k == 0 || k > d {
        return Err(MlError::Data(format!("PCA cannot keep {k} of {d} components")));
    }
    let refs: Vec<&Vec<f64>> = rows.iter().collect();
    let mean = column_mean(&refs, d);
    let cov = scatter(&refs, &mean) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();

    let mut basis = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        canonical_sign(&mut v);
        basis.push(v);
        explained.push(if total > 0.0 { eig.eigenvalues[i].max(0.0) / total } else { 0.0 });
    }
    Ok(Projection {
        kind: ProjectionKind::Pca2,
        mean: mean.iter().copied().collect(),
        basis,
        explained,
    })
}

pub fn pca_fit(train: &DesignMatrix) -> Result<Projection, MlError> {
    pca_fit_k(&train.rows, 2)
}

/// Within-class scatter and class means `(dmd, td)`.
fn class_statistics(train: &DesignMatrix) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>), MlError> {
    let d = train.dim();
    let dmd: Vec<&Vec<f64>> = train.rows_of(Group::Dmd).collect();
    let td: Vec<&Vec<f64>> = train.rows_of(Group::Td).collect();
    if dmd.is_empty() || td.is_empty() {
        return Err(MlError::Training("LDA needs both classes".into()));
    }
    let m_dmd = column_mean(&dmd, d);
    let m_td = column_mean(&td, d);
    let sw = scatter(&dmd, &m_dmd) + scatter(&td, &m_td);
    Ok((sw, m_dmd, m_td))
}

/// Two-class Fisher criterion: between-class over within-class scatter
/// along `direction`.
pub fn fisher_criterion(train: &DesignMatrix, direction: &[f64]) -> Result<f64, MlError> {
    let (sw, m_dmd, m_td) = class_statistics(train)?;
    let w = DVector::from_column_slice(direction);
    let between = w.dot(&(m_dmd - m_td)).powi(2);
    let within = w.dot(&(&sw * &w));
    Ok(between / within)
}

/// Fisher discriminant direction `S_w^{-1} (mu_dmd - mu_td)`, unit norm,
/// oriented so DMD projects higher.
///
/// A numerically singular `S_w` gets a ridge of `1e-6 * trace / d`.
pub fn lda_fit(train: &DesignMatrix) -> Result<Projection, MlError> {
    let d = train.dim();
    let (mut sw, m_dmd, m_td) = class_statistics(train)?;
    let diff = &m_dmd - &m_td;

    let trace = sw.trace();
    let eig = SymmetricEigen::new(sw.clone());
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let min_ev = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_ev > 1e-10 * max_ev) {
        let ridge = 1e-6 * trace / d as f64;
        if !(ridge > 0.0) {
            return Err(MlError::Numeric {
                iteration: None,
                message: "within-class scatter is zero; LDA direction undefined".into(),
            });
        }
        for i in 0..d {
            sw[(i, i)] += ridge;
        }
    }
    let w = sw
        .cholesky()
        .ok_or_else(|| MlError::Numeric {
            iteration: None,
            message: "within-class scatter not positive definite after regularization".into(),
        })?
        .solve(&diff);
    let norm = w.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(MlError::Numeric {
            iteration: None,
            message: "degenerate LDA direction (identical class means?)".into(),
        });
    }
    let mut w: Vec<f64> = (w / norm).iter().copied().collect();
    if w.iter().zip(diff.iter()).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
    }

    let all: Vec<&Vec<f64>> = train.rows.iter().collect();
    Ok(Projection {
        kind: ProjectionKind::Lda1,
        mean: column_mean(&all, d).iter().copied().collect(),
        basis: vec![w],
        explained: Vec::new(),
    })
}

pub fn project(projection: &Projection, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    projection.project(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn matrix(rows: Vec<Vec<f64>>, labels: Vec<Group>) -> DesignMatrix {
        let n = rows.len();
        let d = rows[0].len();
        DesignMatrix::new(rows, labels, (0..n).map(|i| format!("s{i}")).collect(), (0..d).map(|j| format!("c{j}")).collect()).unwrap()
    }

    #[test]
    fn rank_one_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let p = pca_fit_k(&rows, 2).unwrap();
        let s5 = 5f64.sqrt();
        assert!((p.basis[0][0] - 1.0 / s5).abs() < 1e-9);
        assert!((p.basis[0][1] - 2.0 / s5).abs() < 1e-9);
        assert!((p.explained[0] - 1.0).abs() < 1e-9);
        assert!(p.explained[0] >= p.explained[1]);
    }

    #[test]
    fn full_rank_reconstruction_and_orthonormality() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64).collect())
            .collect();
        let p = pca_fit_k(&rows, 5).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = p.basis[a].iter().zip(&p.basis[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
        assert!(p.explained.windows(2).all(|w| w[0] >= w[1]));
        assert!(p.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
        for r in &rows {
            let back = p.reconstruct_row(&p.project_row(r));
            for (x, y) in r.iter().zip(&back) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_classes_separate_on_first_axis() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let (g, cx) = if i % 2 == 0 { (Group::Dmd, -3.0) } else { (Group::Td, 3.0) };
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![cx + a, b]);
            labels.push(g);
        }
        let p = lda_fit(&matrix(rows, labels)).unwrap();
        let w = &p.basis[0];
        assert!((w[0].hypot(w[1]) - 1.0).abs() < 1e-12);
        // DMD sits at negative x, so the oriented direction is close to (-1, 0)
        assert!(w[0] < -0.99, "{w:?}");
    }

    #[test]
    fn lda_beats_random_directions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let g = if i < 30 { Group::Dmd } else { Group::Td };
            let shift = if g == Group::Dmd { 0.7 } else { 0.0 };
            rows.push((0..8).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64 * 0.3) + shift * (j % 3) as f64).collect());
            labels.push(g);
        }
        let m = matrix(rows, labels);
        let p = lda_fit(&m).unwrap();
        let best = fisher_criterion(&m, &p.basis[0]).unwrap();
        for _ in 0..1000 {
            let mut dir: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|x| *x /= n);
            assert!(fisher_criterion(&m, &dir).unwrap() <= best * (1.0 + 1e-9));
        }
    }

    #[test]
    fn singular_scatter_is_regularized() {
        // third column constant: within-class scatter is singular
        let rows = vec![
            vec![0.0, 1.0, 4.0],
            vec![0.5, 1.5, 4.0],
            vec![1.0, 0.8, 4.0],
            vec![3.0, 2.0, 4.0],
            vec![3.5, 2.2, 4.0],
            vec![4.0, 2.9, 4.0],
        ];
        let labels = vec![Group::Dmd, Group::Dmd, Group::Dmd, Group::Td, Group::Td, Group::Td];
        let p = lda_fit(&matrix(rows, labels)).unwrap();
        assert!(p.basis[0].iter().all(|v| v.is_finite()));
        assert!(p.basis[0][2].abs() < 1e-6);
    }

    #[test]
    fn pca_rejects_tiny_inputs() {
        assert!(pca_fit_k(&[vec![1.0, 2.0], vec![2.0, 1.0]], 2).is_err());
        assert!(pca_fit_k(&[vec![1.0], vec![2.0], vec![3.0]], 1).is_err());
    }
}
