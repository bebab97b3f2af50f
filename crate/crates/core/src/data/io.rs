use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::resample::resample_uniform;
use super::{Activity, Annotations, DataError, Dataset, ParticipantRecord, Recording};

pub const CSV_HEADER: &str = "t_s,ax_g,ay_g,az_g";

/// On-disk manifest layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub participants: Vec<ParticipantRecord>,
    pub recordings: Vec<RecordingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub participant_id: String,
    pub activity: Activity,
    /// Relative paths resolve against the manifest's directory.
    pub csv_path: String,
    pub rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_distance_m: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

/// Raw rows of a signal CSV, timestamps as written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalRows {
    pub times: Vec<f64>,
    pub values: Vec<[f64; 3]>,
}

/// Rounds a value in g to the sensor resolution.
pub fn quantize_g(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn format_g(v: f64) -> String {
    format!("{:.3}", v)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| DataError::Validation(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| DataError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| DataError::io(&tmp, e))?;
        f.sync_all().map_err(|e| DataError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

/// Serializes timestamped rows in the canonical CSV format, quantizing
/// values to 0.001 g.
pub fn write_signal_csv<W: Write>(out: W, times: &[f64], values: &[[f64; 3]]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{CSV_HEADER}")?;
    for (t, v) in times.iter().zip(values) {
        writeln!(out, "{},{},{},{}", t, format_g(v[0]), format_g(v[1]), format_g(v[2]))?;
    }
    out.flush()
}

pub fn read_signal_csv(path: &Path) -> Result<SignalRows, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |line: Option<u64>, message: String| DataError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader
        .headers()
        .map_err(|e| csv_err(Some(1), e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != CSV_HEADER {
        return Err(csv_err(
            Some(1),
            format!("expected header {CSV_HEADER:?}, found {headers:?}"),
        ));
    }

    let mut rows = SignalRows::default();
    for record in reader.deserialize::<(f64, f64, f64, f64)>() {
        let (t, x, y, z) = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            csv_err(line, e.to_string())
        })?;
        if let Some(&prev) = rows.times.last() {
            if t < prev {
                return Err(csv_err(
                    Some(rows.times.len() as u64 + 2),
                    format!("timestamp {t} decreases (previous {prev})"),
                ));
            }
        }
        rows.times.push(t);
        rows.values.push([x, y, z]);
    }
    Ok(rows)
}

/// Loads and validates a manifest and every CSV it references.
///
/// Recordings whose timestamps are not on the `rate_hz` grid are resampled
/// by linear interpolation anchored at their first timestamp.
pub fn load_manifest(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut ids = HashSet::new();
    for p in &manifest.participants {
        p.validate()?;
        if !ids.insert(p.id.clone()) {
            return Err(DataError::Validation(format!(
                "duplicate participant id {:?}",
                p.id
            )));
        }
    }

    let mut recordings = Vec::with_capacity(manifest.recordings.len());
    for entry in &manifest.recordings {
        let csv_path = resolve(base, &entry.csv_path);
        let rows = read_signal_csv(&csv_path)?;
        let samples = resample_uniform(&rows.times, &rows.values, entry.rate_hz);
        let annotations = Annotations {
            observed_steps: entry.observed_steps,
            measured_distance_m: entry.measured_distance_m,
            truncated: entry.truncated,
        };
        let rec = Recording::new(
            entry.participant_id.clone(),
            entry.activity,
            entry.rate_hz,
            samples,
            annotations,
        )
        .map_err(|e| DataError::Validation(format!("{}: {e}", csv_path.display())))?;
        recordings.push(rec);
    }

    Dataset::new(manifest.participants, recordings)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn file_stem_for(index: usize, rec: &Recording) -> String {
    let pid: String = rec
        .participant_id()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{index:04}_{pid}_{}", rec.activity())
}

/// Writes the manifest at `path` and one CSV per recording under
/// `recordings/` next to it. Output bytes depend only on the dataset.
pub fn write_manifest(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::with_capacity(dataset.recordings.len());

    for (i, rec) in dataset.recordings.iter().enumerate() {
        let rel = format!("recordings/{}.csv", file_stem_for(i, rec));
        let times: Vec<f64> = (0..rec.len()).map(|k| k as f64 / rec.rate_hz()).collect();
        let mut buf = Vec::new();
        write_signal_csv(&mut buf, &times, rec.samples()).map_err(|e| DataError::io(&rel, e))?;
        write_atomic(&base.join(&rel), &buf)?;

        let ann = rec.annotations();
        entries.push(RecordingEntry {
            participant_id: rec.participant_id().to_string(),
            activity: rec.activity(),
            csv_path: rel,
            rate_hz: rec.rate_hz(),
            observed_steps: ann.observed_steps,
            measured_distance_m: ann.measured_distance_m,
            truncated: ann.truncated,
        });
    }

    let manifest = Manifest {
        participants: dataset.participants.clone(),
        recordings: entries,
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::Validation(format!("manifest serialization: {e}")))?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;

    fn participant(id: &str) -> ParticipantRecord {
        ParticipantRecord {
            id: id.into(),
            group: Group::Dmd,
            age: 7,
            weight_kg: 29.8,
            height_m: 1.33,
            nsaa: Some(13),
        }
    }

    fn quantized_recording(id: &str, activity: Activity, n: usize) -> Recording {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 30.0;
                [
                    quantize_g(1.0 + 0.2 * (7.0 * t).sin()),
                    quantize_g(-0.1 * (3.0 * t).cos()),
                    quantize_g(0.15 * (9.0 * t).sin()),
                ]
            })
            .collect();
        Recording::new(id, activity, 30.0, samples, Annotations::default()).unwrap()
    }

    #[test]
    fn single_recording_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut rec = quantized_recording("p1", Activity::SixMwt, 95);
        rec.annotations.measured_distance_m = Some(412.5);
        rec.annotations.observed_steps = Some(3);
        let ds = Dataset::new(vec![participant("p1")], vec![rec]).unwrap();
        write_manifest(&ds, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        write_manifest(&Dataset::default(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"participants\": []"));
        assert!(text.contains("\"recordings\": []"));
        let back = load_manifest(&path).unwrap();
        assert!(back.participants.is_empty() && back.recordings.is_empty());
    }

    #[test]
    fn malformed_json_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, "{\n  \"participants\": [\n    {\"id\": \"a\", \"group\": \"TD\"}\n  ],\n  \"recordings\": []\n}").unwrap();
        match load_manifest(&path) {
            Err(DataError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("age"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_missing_csv_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest {
            participants: vec![participant("a"), participant("a")],
            recordings: vec![],
        };
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Validation(_))));

        let m = Manifest {
            participants: vec![participant("a")],
            recordings: vec![RecordingEntry {
                participant_id: "a".into(),
                activity: Activity::ScL2,
                csv_path: "nope.csv".into(),
                rate_hz: 30.0,
                observed_steps: None,
                measured_distance_m: None,
                truncated: false,
            }],
        };
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Io { .. })));
    }

    #[test]
    fn out_of_range_sample_names_recording_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for i in 0..70 {
            let z = if i == 41 { "2.500" } else { "0.010" };
            csv.push_str(&format!("{},1.000,0.000,{z}\n", i as f64 / 30.0));
        }
        fs::write(dir.path().join("r.csv"), csv).unwrap();
        let m = Manifest {
            participants: vec![participant("a")],
            recordings: vec![RecordingEntry {
                participant_id: "a".into(),
                activity: Activity::ScL2,
                csv_path: "r.csv".into(),
                rate_hz: 30.0,
                observed_steps: None,
                measured_distance_m: None,
                truncated: false,
            }],
        };
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("a/SC-L2") && err.contains("sample 41"), "{err}");
    }

    #[test]
    fn csv_rejects_bad_header_and_decreasing_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,x,y,z\n0,0,0,0\n").unwrap();
        assert!(read_signal_csv(&p).is_err());
        fs::write(&p, format!("{CSV_HEADER}\n0.1,0,0,0\n0.0,0,0,0\n")).unwrap();
        let err = read_signal_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn quantization_is_idempotent() {
        for v in [-1.99951, -0.0004, 0.0, 0.0005, 0.98765, 1.9994] {
            let q = quantize_g(v);
            let parsed: f64 = format_g(q).parse().unwrap();
            assert_eq!(parsed.to_bits(), q.to_bits(), "{v}");
            assert_eq!(quantize_g(q).to_bits(), q.to_bits());
        }
    }
}
