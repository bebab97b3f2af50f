use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use super::stats::{StatsBlock, STATS_COLUMNS};
use super::{CellKey, CellResult, EvalReport, FoldResult, Method};
use crate::data::Activity;
use crate::features::{FeatureTable, FeatureVector};
use crate::ml::{ModelKind, ProjectionKind};

pub const MIXED_EFFECTS_NOTE: &str = "Velocity-slope comparisons (multilevel mixed-effects regression) are not computed; \
     scatter.csv holds per-subject feature and speed values for external tools.";

/// `"NS"` at or above 0.05, otherwise up to four decimals.
pub fn format_p(p: f64) -> String {
    if !(p < 0.05) {
        return "NS".into();
    }
    if p < 0.0001 {
        return "<0.0001".into();
    }
    let s = format!("{p:.4}");
    s.trim_end_matches('0').to_string()
}

/// Two decimals, as in `91.67`.
pub fn format_accuracy(percent: f64) -> String {
    format!("{percent:.2}")
}

fn mean_sd(mean: f64, sd: f64) -> String {
    if mean.is_nan() {
        "-".into()
    } else {
        format!("{mean:.2} ({sd:.2})")
    }
}

/// Left-aligned columns separated by two spaces, trailing space trimmed.
fn layout(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut width = vec![0; ncol];
    for r in rows {
        for (j, c) in r.iter().enumerate() {
            width[j] = width[j].max(c.chars().count());
        }
    }
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (j, c) in r.iter().enumerate() {
            line.push_str(c);
            if j + 1 < r.len() {
                line.extend(std::iter::repeat_n(' ', width[j] - c.chars().count() + 2));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn missing_footnote(present: &BTreeSet<String>, what: &str) -> Option<String> {
    let missing: Vec<&str> = Activity::ALL
        .iter()
        .map(|a| a.as_str())
        .filter(|a| !present.contains(*a))
        .collect();
    (!missing.is_empty()).then(|| format!("* omitted, no {what}: {}", missing.join(", ")))
}

/// Group means (SD) per activity with p-value rows.
pub fn render_table2(blocks: &[StatsBlock]) -> String {
    let mut rows = vec![
        std::iter::once("Activity".to_string())
            .chain(std::iter::once("Case".into()))
            .chain(STATS_COLUMNS.iter().map(|c| c.to_string()))
            .collect::<Vec<_>>(),
    ];
    for b in blocks {
        rows.push(
            [b.activity.clone(), "TD".into()]
                .into_iter()
                .chain(b.features.iter().map(|f| mean_sd(f.td.mean, f.td.sd)))
                .collect(),
        );
        rows.push(
            [String::new(), "DMD".into()]
                .into_iter()
                .chain(b.features.iter().map(|f| mean_sd(f.dmd.mean, f.dmd.sd)))
                .collect(),
        );
        rows.push(
            [String::new(), "p value".into()]
                .into_iter()
                .chain(b.features.iter().map(|f| f.test.map_or("-".into(), |t| format_p(t.p))))
                .collect(),
        );
    }
    let mut out = String::from("Clinical features by group: mean (SD), two-tailed Welch t-test (NS: p >= 0.05)\n");
    out.push_str(&layout(&rows));
    let present: BTreeSet<String> = blocks.iter().map(|b| b.activity.clone()).collect();
    if let Some(note) = missing_footnote(&present, "feature rows") {
        out.push_str(&note);
        out.push('\n');
    }
    out
}

/// Best accuracy over window lengths and the lengths that reach it.
fn best_over_windows<'a>(cells: impl Iterator<Item = &'a CellResult>) -> Option<(Option<f64>, Vec<usize>)> {
    let mut best: Option<f64> = None;
    let mut lens = Vec::new();
    let mut any = false;
    for c in cells {
        any = true;
        let Some(acc) = c.accuracy() else { continue };
        match best {
            Some(b) if acc < b - 1e-9 => {}
            Some(b) if (acc - b).abs() <= 1e-9 => lens.extend(c.key.window_len),
            _ => {
                best = Some(acc);
                lens = c.key.window_len.into_iter().collect();
            }
        }
    }
    lens.sort_unstable();
    any.then_some((best, lens))
}

fn acc_text(a: Option<f64>) -> String {
    a.map_or("n/a".into(), format_accuracy)
}

/// Per activity and classifier: CF accuracy with each projection, best raw
/// accuracy with the window lengths achieving it, and the CNN's best.
pub fn render_table3(cells: &[CellResult]) -> String {
    let by_key: BTreeMap<&CellKey, &CellResult> = cells.iter().map(|c| (&c.key, c)).collect();
    let projections = [ProjectionKind::None, ProjectionKind::Pca2, ProjectionKind::Lda1];
    let mut rows = vec![vec![
        "Activity".to_string(),
        "Alg.".into(),
        "CF".into(),
        "CF-PCA".into(),
        "CF-LDA".into(),
        "TW-RAW".into(),
        "RAW".into(),
        "TW-PCA".into(),
        "RAW-PCA".into(),
        "TW-LDA".into(),
        "RAW-LDA".into(),
        "TW-CNN".into(),
        "CNN".into(),
    ]];
    let mut present = BTreeSet::new();
    for activity in Activity::ALL {
        let here: Vec<&CellResult> = cells.iter().filter(|c| c.key.activity == activity).collect();
        if here.is_empty() {
            continue;
        }
        present.insert(activity.as_str().to_string());
        let cnn = best_over_windows(here.iter().copied().filter(|c| c.key.method == Method::DlRaw));
        let models: Vec<&str> = ModelKind::ALL
            .iter()
            .map(|m| m.as_str())
            .filter(|m| here.iter().any(|c| c.key.model == *m))
            .collect();
        let models = if models.is_empty() { vec!["-"] } else { models };
        for (i, model) in models.iter().enumerate() {
            let mut row = vec![
                if i == 0 { activity.as_str().to_string() } else { String::new() },
                model.to_string(),
            ];
            for p in projections {
                let key = CellKey {
                    activity,
                    method: Method::CmlCf,
                    model: model.to_string(),
                    projection: p,
                    window_len: None,
                };
                row.push(by_key.get(&key).map_or("-".into(), |c| acc_text(c.accuracy())));
            }
            for p in projections {
                let raw = best_over_windows(
                    here.iter()
                        .copied()
                        .filter(|c| c.key.method == Method::CmlRaw && c.key.model == *model && c.key.projection == p),
                );
                match raw {
                    Some((acc, lens)) => {
                        row.push(join_lens(&lens));
                        row.push(acc_text(acc));
                    }
                    None => row.extend(["-".into(), "-".into()]),
                }
            }
            match (&cnn, i) {
                (Some((acc, lens)), 0) => {
                    row.push(join_lens(lens));
                    row.push(acc_text(*acc));
                }
                (None, 0) => row.extend(["-".into(), "-".into()]),
                _ => row.extend([String::new(), String::new()]),
            }
            rows.push(row);
        }
    }
    let mut out = String::from("Leave-one-subject-out accuracy (%) per activity and method\n");
    out.push_str(&layout(&rows));
    if let Some(note) = missing_footnote(&present, "experiment cells") {
        out.push_str(&note);
        out.push('\n');
    }
    out
}

fn join_lens(lens: &[usize]) -> String {
    if lens.is_empty() {
        "-".into()
    } else {
        lens.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Serialize)]
struct CellView<'a> {
    #[serde(flatten)]
    key: &'a CellKey,
    accuracy_percent: Option<f64>,
    correct: usize,
    evaluated: usize,
    folds: &'a [FoldResult],
}

#[derive(Serialize)]
struct ReportView<'a> {
    cells: Vec<CellView<'a>>,
    group_stats: &'a [StatsBlock],
    notes: Vec<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub json: String,
    pub text: String,
}

pub fn render_report(report: &EvalReport) -> RenderedReport {
    let view = ReportView {
        cells: report
            .cells
            .iter()
            .map(|c| CellView {
                key: &c.key,
                accuracy_percent: c.accuracy(),
                correct: c.correct(),
                evaluated: c.evaluated(),
                folds: &c.folds,
            })
            .collect(),
        group_stats: &report.group_stats,
        notes: vec![MIXED_EFFECTS_NOTE],
    };
    let mut json = serde_json::to_string_pretty(&view).expect("report serializes");
    json.push('\n');

    let mut text = String::new();
    if report.is_empty() {
        text.push_str("(empty report)\n");
    }
    if !report.group_stats.is_empty() {
        text.push_str(&render_table2(&report.group_stats));
        text.push('\n');
    }
    if !report.cells.is_empty() {
        text.push_str(&render_table3(&report.cells));
        text.push('\n');
    }
    text.push_str("Note: ");
    text.push_str(MIXED_EFFECTS_NOTE);
    text.push('\n');
    RenderedReport { json, text }
}

/// Per-subject speed and feature values for slope plots.
pub fn write_scatter_csv<W: Write>(table: &FeatureTable, out: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "participant_id,group,activity,speed_mps,{}", FeatureVector::NAMES.join(","))?;
    for r in &table.rows {
        let vals: Vec<String> = r.extraction.features.reported().iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.participant_id,
            r.group,
            r.activity,
            r.extraction.speed_mps,
            vals.join(",")
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_rendering() {
        assert_eq!(format_p(0.2), "NS");
        assert_eq!(format_p(0.05), "NS");
        assert_eq!(format_p(0.0499), "0.0499");
        assert_eq!(format_p(0.002), "0.002");
        assert_eq!(format_p(0.015), "0.015");
        assert_eq!(format_p(0.00004), "<0.0001");
    }

    #[test]
    fn accuracy_rendering() {
        assert_eq!(format_accuracy(11.0 / 12.0 * 100.0), "91.67");
        assert_eq!(format_accuracy(0.0), "0.00");
        assert_eq!(format_accuracy(100.0), "100.00");
    }

    #[test]
    fn layout_pads_columns() {
        let t = layout(&[vec!["a".into(), "bb".into()], vec!["ccc".into(), "d".into()]]);
        assert_eq!(t, "a    bb\nccc  d\n");
    }
}
