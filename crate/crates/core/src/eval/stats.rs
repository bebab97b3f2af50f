use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;
use crate::data::{Activity, Group};
use crate::features::{FeatureTable, FeatureVector};

/// Variance substituted for an exactly constant sample.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom. `t` is positive when `a` has the larger mean.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::Stats(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::Stats("t-test sample contains a non-finite value".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    welch_from_summary(ma, va.max(VARIANCE_FLOOR), a.len(), mb, vb.max(VARIANCE_FLOOR), b.len())
}

/// Welch test from summary statistics (`var` is the sample variance).
pub fn welch_from_summary(ma: f64, va: f64, na: usize, mb: f64, vb: f64, nb: usize) -> Result<TTest, EvalError> {
    let (sa, sb) = (va / na as f64, vb / nb as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0 && se2.is_finite()) {
        return Err(EvalError::Stats(format!("degenerate standard error {se2}")));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na as f64 - 1.0) + sb * sb / (nb as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| EvalError::Stats(format!("t distribution with df {df}: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n < 2`.
    pub sd: f64,
}

impl Summary {
    pub fn of(x: &[f64]) -> Summary {
        let n = x.len();
        if n == 0 {
            return Summary { n, mean: f64::NAN, sd: f64::NAN };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 { 0.0 } else { mean_var(x).1.sqrt() };
        Summary { n, mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature: String,
    pub td: Summary,
    pub dmd: Summary,
    /// Absent when either group has fewer than 2 values.
    pub test: Option<TTest>,
}

/// One activity (or `"All"`) worth of group comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBlock {
    pub activity: String,
    pub features: Vec<FeatureStats>,
}

/// Column labels: the eight features in report units plus `VP-AP`.
pub const STATS_COLUMNS: [&str; 9] = ["SP", "SF", "SL", "TP", "VP", "MP", "AP", "FI", "VP-AP"];

fn columns(f: &FeatureVector) -> [f64; 9] {
    let r = f.reported();
    [r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[4] - r[6]]
}

fn block(name: String, rows: &[(Group, [f64; 9])]) -> StatsBlock {
    let features = STATS_COLUMNS
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let pick = |g: Group| rows.iter().filter(|(h, _)| *h == g).map(|(_, v)| v[j]).collect::<Vec<f64>>();
            let (td, dmd) = (pick(Group::Td), pick(Group::Dmd));
            FeatureStats {
                feature: label.to_string(),
                td: Summary::of(&td),
                dmd: Summary::of(&dmd),
                test: welch_ttest(&td, &dmd).ok(),
            }
        })
        .collect();
    StatsBlock { activity: name, features }
}

/// Per-activity group statistics in canonical activity order, then the
/// pooled `"All"` block. Activities without rows are left out.
pub fn group_stats(table: &FeatureTable) -> Vec<StatsBlock> {
    let mut blocks = Vec::new();
    let mut all = Vec::new();
    for activity in Activity::ALL {
        let rows: Vec<(Group, [f64; 9])> = table
            .rows_of(activity)
            .map(|r| (r.group, columns(&r.extraction.features)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        all.extend(rows.iter().cloned());
        blocks.push(block(activity.to_string(), &rows));
    }
    if !all.is_empty() {
        blocks.push(block("All".into(), &all));
    }
    blocks
}
