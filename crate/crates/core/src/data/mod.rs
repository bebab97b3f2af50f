//! Canonical participant and recording types plus manifest persistence.

mod io;
mod resample;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_manifest, quantize_g, read_signal_csv, write_atomic, write_manifest, write_signal_csv,
    Manifest, RecordingEntry, SignalRows, CSV_HEADER,
};
pub use resample::{is_uniform, resample_uniform};

/// Sensor range in g.
pub const SENSOR_RANGE_G: f64 = 2.0;
/// Sensor resolution in g; files are quantized to this step.
pub const SENSOR_RESOLUTION_G: f64 = 0.001;
/// Nominal streaming rate.
pub const DEFAULT_RATE_HZ: f64 = 30.0;
/// Length of the speed-calibration corridor.
pub const CALIBRATION_DISTANCE_M: f64 = 25.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: CSV error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Csv {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "DMD")]
    Dmd,
    #[serde(rename = "TD")]
    Td,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::Dmd, Group::Td];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Dmd => "DMD",
            Group::Td => "TD",
        }
    }

    /// Class index used by the classifiers: DMD is 0, TD is 1.
    pub fn index(self) -> usize {
        match self {
            Group::Dmd => 0,
            Group::Td => 1,
        }
    }

    pub fn from_index(i: usize) -> Group {
        if i == 0 {
            Group::Dmd
        } else {
            Group::Td
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DMD" => Ok(Group::Dmd),
            "TD" => Ok(Group::Td),
            other => Err(DataError::Validation(format!("unknown group {other:?}"))),
        }
    }
}

/// The seven gait tasks. Declaration order is the canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Activity {
    #[serde(rename = "SC-L1")]
    ScL1,
    #[serde(rename = "SC-L2")]
    ScL2,
    #[serde(rename = "SC-L3")]
    ScL3,
    #[serde(rename = "SC-L4")]
    ScL4,
    #[serde(rename = "SC-L5")]
    ScL5,
    #[serde(rename = "6MWT")]
    SixMwt,
    #[serde(rename = "100MRW")]
    HundredMrw,
}

impl Activity {
    pub const ALL: [Activity; 7] = [
        Activity::ScL1,
        Activity::ScL2,
        Activity::ScL3,
        Activity::ScL4,
        Activity::ScL5,
        Activity::SixMwt,
        Activity::HundredMrw,
    ];

    pub const CALIBRATION: [Activity; 5] = [
        Activity::ScL1,
        Activity::ScL2,
        Activity::ScL3,
        Activity::ScL4,
        Activity::ScL5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::ScL1 => "SC-L1",
            Activity::ScL2 => "SC-L2",
            Activity::ScL3 => "SC-L3",
            Activity::ScL4 => "SC-L4",
            Activity::ScL5 => "SC-L5",
            Activity::SixMwt => "6MWT",
            Activity::HundredMrw => "100MRW",
        }
    }

    pub fn is_calibration(self) -> bool {
        self.nominal_distance().is_some()
    }

    /// Ground-truth distance for the fixed-distance speed-calibration walks.
    pub fn nominal_distance(self) -> Option<f64> {
        match self {
            Activity::ScL1 | Activity::ScL2 | Activity::ScL3 | Activity::ScL4 | Activity::ScL5 => {
                Some(CALIBRATION_DISTANCE_M)
            }
            Activity::SixMwt | Activity::HundredMrw => None,
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activity::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| DataError::Validation(format!("unknown activity {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub id: String,
    pub group: Group,
    pub age: u32,
    pub weight_kg: f64,
    pub height_m: f64,
    pub nsaa: Option<u8>,
}

impl ParticipantRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.id.is_empty() {
            return Err(DataError::Validation("participant id is empty".into()));
        }
        if !(self.height_m.is_finite() && self.height_m > 0.0) {
            return Err(DataError::Validation(format!(
                "participant {}: height must be positive, got {}",
                self.id, self.height_m
            )));
        }
        if !(self.weight_kg.is_finite() && self.weight_kg > 0.0) {
            return Err(DataError::Validation(format!(
                "participant {}: weight must be positive, got {}",
                self.id, self.weight_kg
            )));
        }
        if let Some(score) = self.nsaa {
            if score > 34 {
                return Err(DataError::Validation(format!(
                    "participant {}: NSAA score {score} outside 0..=34",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub observed_steps: Option<u32>,
    pub measured_distance_m: Option<f64>,
    /// Set by the ingest server when a stream ended without its terminator.
    pub truncated: bool,
}

/// One participant performing one activity, sampled uniformly.
///
/// Samples are `[x, y, z]` in g with x vertical, y mediolateral and z
/// anteroposterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    participant_id: String,
    activity: Activity,
    rate_hz: f64,
    samples: Vec<[f64; 3]>,
    annotations: Annotations,
}

impl Recording {
    pub fn new(
        participant_id: impl Into<String>,
        activity: Activity,
        rate_hz: f64,
        samples: Vec<[f64; 3]>,
        annotations: Annotations,
    ) -> Result<Self, DataError> {
        let rec = Recording {
            participant_id: participant_id.into(),
            activity,
            rate_hz,
            samples,
            annotations,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<(), DataError> {
        let name = self.label();
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(DataError::Validation(format!(
                "recording {name}: rate must be positive, got {}",
                self.rate_hz
            )));
        }
        if (self.samples.len() as f64) < 2.0 * self.rate_hz {
            return Err(DataError::Validation(format!(
                "recording {name}: {} samples is shorter than 2 s at {} Hz",
                self.samples.len(),
                self.rate_hz
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite() || v.abs() > SENSOR_RANGE_G) {
                return Err(DataError::Validation(format!(
                    "recording {name}: sample {i} {s:?} outside ±{SENSOR_RANGE_G} g"
                )));
            }
        }
        if let Some(d) = self.annotations.measured_distance_m {
            if !(d.is_finite() && d > 0.0) {
                return Err(DataError::Validation(format!(
                    "recording {name}: measured distance must be positive, got {d}"
                )));
            }
        }
        Ok(())
    }

    /// `participant/activity`, used in error messages.
    pub fn label(&self) -> String {
        format!("{}/{}", self.participant_id, self.activity)
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn activity(&self) -> Activity {
        self.activity
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    pub fn annotations(&self) -> &Annotations {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    /// One axis (0 = x, 1 = y, 2 = z) converted to m/s².
    pub fn axis_si(&self, axis: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s[axis] * crate::STANDARD_GRAVITY)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub participants: Vec<ParticipantRecord>,
    pub recordings: Vec<Recording>,
}

impl Dataset {
    pub fn new(
        participants: Vec<ParticipantRecord>,
        recordings: Vec<Recording>,
    ) -> Result<Self, DataError> {
        let ds = Dataset {
            participants,
            recordings,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks participant invariants, id uniqueness, and that every
    /// recording refers to a known participant.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.participants {
            p.validate()?;
            if !seen.insert(p.id.as_str()) {
                return Err(DataError::Validation(format!(
                    "duplicate participant id {:?}",
                    p.id
                )));
            }
        }
        for r in &self.recordings {
            if !seen.contains(r.participant_id()) {
                return Err(DataError::Validation(format!(
                    "recording {} refers to unknown participant {:?}",
                    r.label(),
                    r.participant_id()
                )));
            }
        }
        Ok(())
    }

    pub fn participant(&self, id: &str) -> Option<&ParticipantRecord> {
        self.participants.iter().find(|p| p.id == id)
    }

    pub fn recordings_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Recording> + 'a {
        self.recordings
            .iter()
            .filter(move |r| r.participant_id() == id)
    }

    pub fn recordings_of(&self, activity: Activity) -> impl Iterator<Item = &Recording> + '_ {
        self.recordings
            .iter()
            .filter(move |r| r.activity() == activity)
    }

    pub fn activities(&self) -> Vec<Activity> {
        let mut acts: Vec<Activity> = self.recordings.iter().map(|r| r.activity()).collect();
        acts.sort();
        acts.dedup();
        acts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize) -> Vec<[f64; 3]> {
        vec![[1.0, 0.0, 0.0]; n]
    }

    #[test]
    fn activity_strings_round_trip() {
        for a in Activity::ALL {
            assert_eq!(a.as_str().parse::<Activity>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.as_str()));
        }
        assert!("SC-L6".parse::<Activity>().is_err());
    }

    #[test]
    fn calibration_levels_carry_25m() {
        for a in Activity::CALIBRATION {
            assert_eq!(a.nominal_distance(), Some(25.0));
        }
        assert_eq!(Activity::SixMwt.nominal_distance(), None);
        assert_eq!(Activity::HundredMrw.nominal_distance(), None);
    }

    #[test]
    fn recording_rejects_short_and_out_of_range() {
        assert!(Recording::new("p", Activity::ScL1, 30.0, flat(59), Annotations::default()).is_err());
        let ok = Recording::new("p", Activity::ScL1, 30.0, flat(60), Annotations::default()).unwrap();
        assert_eq!(ok.duration_s(), 2.0);

        let mut s = flat(90);
        s[17][2] = 2.0001;
        let err = Recording::new("p", Activity::ScL1, 30.0, s, Annotations::default()).unwrap_err();
        assert!(err.to_string().contains("sample 17"), "{err}");

        assert!(Recording::new("p", Activity::ScL1, 0.0, flat(90), Annotations::default()).is_err());
    }

    #[test]
    fn dataset_rejects_duplicates_and_orphans() {
        let p = ParticipantRecord {
            id: "a".into(),
            group: Group::Td,
            age: 9,
            weight_kg: 30.0,
            height_m: 1.3,
            nsaa: Some(34),
        };
        assert!(Dataset::new(vec![p.clone(), p.clone()], vec![]).is_err());
        let orphan = Recording::new("b", Activity::SixMwt, 30.0, flat(60), Annotations::default()).unwrap();
        assert!(Dataset::new(vec![p.clone()], vec![orphan]).is_err());

        let mut bad = p;
        bad.height_m = 0.0;
        assert!(bad.validate().is_err());
    }
}
