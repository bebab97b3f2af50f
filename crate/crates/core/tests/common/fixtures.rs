//! Report fixtures shared by the golden-file tests.

use std::path::{Path, PathBuf};

use gaitlab_core::eval::{CellKey, CellResult, FoldOutcome, FoldResult, StatsBlock};
use gaitlab_core::Group;
use serde::Deserialize;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

#[derive(Deserialize)]
struct CellFixture {
    #[serde(flatten)]
    key: CellKey,
    correct: usize,
    evaluated: usize,
    skipped: usize,
}

pub fn table2_input() -> Vec<StatsBlock> {
    let text = std::fs::read_to_string(golden_dir().join("table2_input.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Expands `(correct, evaluated, skipped)` counts into folds: correct folds
/// first, then wrong ones, then skipped ones; truths alternate TD/DMD.
pub fn table3_input() -> Vec<CellResult> {
    let text = std::fs::read_to_string(golden_dir().join("table3_input.json")).unwrap();
    let fixtures: Vec<CellFixture> = serde_json::from_str(&text).unwrap();
    fixtures
        .into_iter()
        .map(|f| {
            let folds = (0..f.evaluated + f.skipped)
                .map(|i| {
                    let truth = if i % 2 == 0 { Group::Td } else { Group::Dmd };
                    let wrong = if truth == Group::Td { Group::Dmd } else { Group::Td };
                    let outcome = if i < f.correct {
                        FoldOutcome::Evaluated { predicted: truth }
                    } else if i < f.evaluated {
                        FoldOutcome::Evaluated { predicted: wrong }
                    } else {
                        FoldOutcome::Skipped { reason: "single-class training set".into() }
                    };
                    FoldResult { held_out: format!("P{i:02}"), truth, window_votes: None, outcome }
                })
                .collect();
            CellResult { key: f.key, folds }
        })
        .collect()
}

/// Compares `actual` with the golden file, or rewrites it when
/// `GAITLAB_BLESS` is set.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("GAITLAB_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected.lines().zip(actual.lines()).position(|(a, b)| a != b).unwrap_or(0);
    Err(format!(
        "{name} differs at line {}:\n  expected: {:?}\n  actual:   {:?}",
        line + 1,
        expected.lines().nth(line).unwrap_or(""),
        actual.lines().nth(line).unwrap_or("")
    ))
}
