//! The eight clinical gait features and the per-subject distance model.
//!
//! Internally all quantities are SI: acceleration PSD integrals in
//! (m/s²)² and per-kilogram powers. The ×10⁶ (TP) and ×10³ (FI) display
//! scalings live in [`FeatureVector::reported`].

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Activity, Dataset, Group, ParticipantRecord, Recording, CALIBRATION_DISTANCE_M};
use crate::dsp::{self, DspError};

/// Axis indices within a sample.
pub const VERTICAL: usize = 0;
pub const MEDIOLATERAL: usize = 1;
pub const ANTEROPOSTERIOR: usize = 2;

/// Calibration walks must yield at least this many steps.
pub const MIN_CALIBRATION_STEPS: usize = 10;
/// Relative calibration-distance error above which a model is unreliable.
pub const RELIABILITY_TOLERANCE: f64 = 0.15;

pub const TP_REPORT_SCALE: f64 = 1e6;
pub const FI_REPORT_SCALE: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("distance model error: {0}")]
    Model(String),
    #[error("recording {recording}: {message}")]
    Data { recording: String, message: String },
    #[error("recording {recording}: feature error: {message}")]
    Feature { recording: String, message: String },
    #[error("recording {recording}: configuration error: {message}")]
    Config { recording: String, message: String },
    #[error("recording {recording}: {source}")]
    Dsp {
        recording: String,
        #[source]
        source: DspError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Speed over height, 1/s.
    pub sp: f64,
    /// Steps per second.
    pub sf: f64,
    /// Step length as a fraction of height.
    pub sl: f64,
    /// Total acceleration power per kilogram.
    pub tp: f64,
    /// Vertical share of `tp`, percent.
    pub vp: f64,
    /// Mediolateral share of `tp`, percent.
    pub mp: f64,
    /// Anteroposterior share of `tp`, percent.
    pub ap: f64,
    /// Anteroposterior power per kilogram over mean speed.
    pub fi: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 8] = ["sp", "sf", "sl", "tp", "vp", "mp", "ap", "fi"];
    pub const LABELS: [&'static str; 8] = ["SP", "SF", "SL", "TP", "VP", "MP", "AP", "FI"];

    pub fn to_array(&self) -> [f64; 8] {
        [self.sp, self.sf, self.sl, self.tp, self.vp, self.mp, self.ap, self.fi]
    }

    /// Values in display units (TP ×10⁶, FI ×10³).
    pub fn reported(&self) -> [f64; 8] {
        let mut v = self.to_array();
        v[3] *= TP_REPORT_SCALE;
        v[7] *= FI_REPORT_SCALE;
        v
    }
}

/// Steps and duration of one fixed-distance walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub activity: Activity,
    pub steps: usize,
    pub duration_s: f64,
}

impl CalibrationPoint {
    pub fn step_frequency(&self) -> f64 {
        self.steps as f64 / self.duration_s
    }

    pub fn step_length(&self) -> f64 {
        CALIBRATION_DISTANCE_M / self.steps as f64
    }
}

/// Per-subject regression of step length on step frequency, fitted on the
/// 25 m calibration walks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceModel {
    pub participant_id: String,
    /// Meters per (step/s).
    pub slope: f64,
    /// Meters.
    pub intercept: f64,
    pub fitted_on: Vec<Activity>,
    /// False when any calibration walk is reconstructed more than 15% away
    /// from 25 m.
    pub reliable: bool,
}

impl DistanceModel {
    /// Least-squares fit from already-counted calibration walks.
    pub fn fit_points(
        participant_id: impl Into<String>,
        points: &[CalibrationPoint],
    ) -> Result<Self, FeatureError> {
        let participant_id = participant_id.into();
        if points.len() < 2 {
            return Err(FeatureError::Model(format!(
                "participant {participant_id}: need at least 2 calibration walks, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| p.steps == 0 || !(p.duration_s > 0.0)) {
            return Err(FeatureError::Model(format!(
                "participant {participant_id}: calibration {} has {} steps over {} s",
                p.activity, p.steps, p.duration_s
            )));
        }
        let n = points.len() as f64;
        let xs: Vec<f64> = points.iter().map(CalibrationPoint::step_frequency).collect();
        let ys: Vec<f64> = points.iter().map(CalibrationPoint::step_length).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();

        // identical frequencies leave the slope unidentifiable; fall back to
        // the mean step length
        let slope = if sxx <= 1e-12 * mx.abs().max(1.0).powi(2) {
            0.0
        } else {
            sxy / sxx
        };
        let intercept = my - slope * mx;

        let mut model = DistanceModel {
            participant_id,
            slope,
            intercept,
            fitted_on: points.iter().map(|p| p.activity).collect(),
            reliable: true,
        };
        model.reliable = points.iter().all(|p| {
            let d = model.predict_distance(p.steps, p.duration_s);
            ((d - CALIBRATION_DISTANCE_M) / CALIBRATION_DISTANCE_M).abs() <= RELIABILITY_TOLERANCE
        });
        Ok(model)
    }

    pub fn step_length(&self, step_frequency: f64) -> f64 {
        self.intercept + self.slope * step_frequency
    }

    pub fn predict_distance(&self, steps: usize, duration_s: f64) -> f64 {
        self.step_length(steps as f64 / duration_s) * steps as f64
    }
}

fn detect_steps(rec: &Recording) -> Result<usize, FeatureError> {
    dsp::count_steps(&rec.axis_si(ANTEROPOSTERIOR), rec.rate_hz()).map_err(|source| {
        FeatureError::Dsp {
            recording: rec.label(),
            source,
        }
    })
}

/// Fits a distance model from one participant's speed-calibration walks.
pub fn fit_distance_model(calibrations: &[&Recording]) -> Result<DistanceModel, FeatureError> {
    let Some(first) = calibrations.first() else {
        return Err(FeatureError::Model("no calibration recordings".into()));
    };
    let pid = first.participant_id();
    let mut points = Vec::with_capacity(calibrations.len());
    for rec in calibrations {
        if rec.participant_id() != pid {
            return Err(FeatureError::Model(format!(
                "calibrations mix participants {pid} and {}",
                rec.participant_id()
            )));
        }
        if !rec.activity().is_calibration() {
            return Err(FeatureError::Model(format!(
                "{} is not a fixed-distance calibration walk",
                rec.label()
            )));
        }
        let steps = detect_steps(rec)?;
        if steps < MIN_CALIBRATION_STEPS {
            return Err(FeatureError::Data {
                recording: rec.label(),
                message: format!(
                    "{steps} steps detected, calibration needs at least {MIN_CALIBRATION_STEPS}"
                ),
            });
        }
        points.push(CalibrationPoint {
            activity: rec.activity(),
            steps,
            duration_s: rec.duration_s(),
        });
    }
    DistanceModel::fit_points(pid, &points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    /// Fixed 25 m corridor.
    Nominal,
    /// Annotated by the evaluator.
    Measured,
    /// Predicted by the participant's distance model.
    Imputed,
}

/// Feature vector plus the intermediate quantities it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtraction {
    pub features: FeatureVector,
    pub steps: usize,
    pub duration_s: f64,
    pub distance_m: f64,
    pub distance_source: DistanceSource,
    /// Mean speed in m/s, before height normalization.
    pub speed_mps: f64,
    /// Per-axis PSD integral per kilogram, `[vertical, mediolateral, anteroposterior]`.
    pub axis_power: [f64; 3],
}

pub fn extract_features(
    recording: &Recording,
    participant: &ParticipantRecord,
    model: Option<&DistanceModel>,
) -> Result<FeatureVector, FeatureError> {
    extract_features_detailed(recording, participant, model).map(|e| e.features)
}

pub fn extract_features_detailed(
    recording: &Recording,
    participant: &ParticipantRecord,
    model: Option<&DistanceModel>,
) -> Result<FeatureExtraction, FeatureError> {
    let label = recording.label();
    let steps = detect_steps(recording)?;
    if steps == 0 {
        return Err(FeatureError::Feature {
            recording: label,
            message: "no steps detected".into(),
        });
    }
    let duration_s = recording.duration_s();

    let (distance_m, distance_source) = match (
        recording.activity().nominal_distance(),
        recording.annotations().measured_distance_m,
        model,
    ) {
        (Some(nominal), _, _) => (nominal, DistanceSource::Nominal),
        (None, Some(measured), _) => (measured, DistanceSource::Measured),
        (None, None, Some(model)) => (
            model.predict_distance(steps, duration_s),
            DistanceSource::Imputed,
        ),
        (None, None, None) => {
            return Err(FeatureError::Config {
                recording: label,
                message: "no measured distance and no distance model to impute one".into(),
            })
        }
    };
    if !(distance_m > 0.0) {
        return Err(FeatureError::Feature {
            recording: label,
            message: format!("non-positive distance {distance_m} m"),
        });
    }

    let mut axis_power = [0.0; 3];
    for (axis, slot) in axis_power.iter_mut().enumerate() {
        let spectrum = dsp::psd(&recording.axis_si(axis), recording.rate_hz()).map_err(|source| {
            FeatureError::Dsp {
                recording: label.clone(),
                source,
            }
        })?;
        *slot = spectrum.integral() / participant.weight_kg;
    }
    let tp: f64 = axis_power.iter().sum();
    if !(tp > 0.0) {
        return Err(FeatureError::Feature {
            recording: label,
            message: "zero total power (constant signal)".into(),
        });
    }

    let speed_mps = distance_m / duration_s;
    let height = participant.height_m;
    let features = FeatureVector {
        sp: speed_mps / height,
        sf: steps as f64 / duration_s,
        sl: distance_m / steps as f64 / height,
        tp,
        vp: axis_power[VERTICAL] / tp * 100.0,
        mp: axis_power[MEDIOLATERAL] / tp * 100.0,
        ap: axis_power[ANTEROPOSTERIOR] / tp * 100.0,
        fi: axis_power[ANTEROPOSTERIOR] / speed_mps,
    };
    Ok(FeatureExtraction {
        features,
        steps,
        duration_s,
        distance_m,
        distance_source,
        speed_mps,
        axis_power,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant_id: String,
    pub group: Group,
    pub activity: Activity,
    pub extraction: FeatureExtraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFailure {
    pub participant_id: String,
    pub activity: Activity,
    pub error: String,
}

/// One feature row per successfully processed recording, sorted by
/// `(participant_id, activity)`, plus one entry per failed recording.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    pub failures: Vec<FeatureFailure>,
}

impl FeatureTable {
    pub fn get(&self, participant_id: &str, activity: Activity) -> Option<&FeatureRow> {
        self.rows
            .iter()
            .find(|r| r.participant_id == participant_id && r.activity == activity)
    }

    pub fn rows_of(&self, activity: Activity) -> impl Iterator<Item = &FeatureRow> + '_ {
        self.rows.iter().filter(move |r| r.activity == activity)
    }

    /// CSV with header `participant_id,activity,sp,sf,sl,tp,vp,mp,ap,fi`,
    /// in display units.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(out, "participant_id,activity,{}", FeatureVector::NAMES.join(","))?;
        for row in &self.rows {
            let vals: Vec<String> = row
                .extraction
                .features
                .reported()
                .iter()
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{},{},{}", row.participant_id, row.activity, vals.join(","))?;
        }
        out.flush()
    }
}

/// Extracts features for every recording in the dataset.
///
/// Each participant's distance model is fitted from its own calibration
/// walks; failures are collected rather than aborting the table.
pub fn feature_table(dataset: &Dataset) -> FeatureTable {
    let models: Vec<(String, Result<DistanceModel, FeatureError>)> = dataset
        .participants
        .par_iter()
        .map(|p| {
            let calibrations: Vec<&Recording> = dataset
                .recordings_for(&p.id)
                .filter(|r| r.activity().is_calibration())
                .collect();
            (p.id.clone(), fit_distance_model(&calibrations))
        })
        .collect();

    let mut results: Vec<(usize, &Recording, Result<FeatureRow, FeatureError>)> = dataset
        .recordings
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let result = (|| {
                let participant = dataset.participant(rec.participant_id()).ok_or_else(|| {
                    FeatureError::Config {
                        recording: rec.label(),
                        message: "unknown participant".into(),
                    }
                })?;
                let model = models
                    .iter()
                    .find(|(id, _)| id == rec.participant_id())
                    .and_then(|(_, m)| m.as_ref().ok());
                let extraction = extract_features_detailed(rec, participant, model)
                    .map_err(|e| match (e, models.iter().find(|(id, _)| id == rec.participant_id())) {
                        (FeatureError::Config { recording, message }, Some((_, Err(fit)))) => {
                            FeatureError::Config {
                                recording,
                                message: format!("{message} ({fit})"),
                            }
                        }
                        (e, _) => e,
                    })?;
                Ok(FeatureRow {
                    participant_id: rec.participant_id().to_string(),
                    group: participant.group,
                    activity: rec.activity(),
                    extraction,
                })
            })();
            (i, rec, result)
        })
        .collect();

    results.sort_by(|a, b| {
        (a.1.participant_id(), a.1.activity(), a.0).cmp(&(b.1.participant_id(), b.1.activity(), b.0))
    });
    let mut table = FeatureTable::default();
    for (_, rec, result) in results {
        match result {
            Ok(row) => table.rows.push(row),
            Err(e) => table.failures.push(FeatureFailure {
                participant_id: rec.participant_id().to_string(),
                activity: rec.activity(),
                error: e.to_string(),
            }),
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Annotations;
    use crate::STANDARD_GRAVITY;
    use std::f64::consts::PI;

    fn participant(height: f64, weight: f64) -> ParticipantRecord {
        ParticipantRecord {
            id: "p".into(),
            group: Group::Td,
            age: 10,
            weight_kg: weight,
            height_m: height,
            nsaa: Some(34),
        }
    }

    /// z-axis sine in m/s², other axes silent.
    fn z_sine(activity: Activity, freq: f64, amp_si: f64, secs: f64, distance: Option<f64>) -> Recording {
        let n = (secs * 30.0).round() as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 30.0;
                [0.0, 0.0, amp_si * (2.0 * PI * freq * t).sin() / STANDARD_GRAVITY]
            })
            .collect();
        let ann = Annotations {
            measured_distance_m: distance,
            ..Default::default()
        };
        Recording::new("p", activity, 30.0, samples, ann).unwrap()
    }

    #[test]
    fn speed_arithmetic() {
        // 25 m in 71.43 s at 1.0 m height
        assert!((25.0f64 / 71.43 / 1.0 - 0.35).abs() < 1e-3);
        let n = 2143; // 71.43 s at 30 Hz
        let samples = (0..n)
            .map(|i| [0.0, 0.0, 0.1 * (2.0 * PI * 1.3 * i as f64 / 30.0).sin()])
            .collect();
        let rec = Recording::new("p", Activity::ScL1, 30.0, samples, Annotations::default()).unwrap();
        let f = extract_features(&rec, &participant(1.0, 30.0), None).unwrap();
        assert!((f.sp - 25.0 / (2143.0 / 30.0)).abs() < 1e-12);
        assert!((f.sp - 0.35).abs() < 1e-3);
    }

    #[test]
    fn vertical_only_signal() {
        // steps are counted on z, so z carries a vanishing cadence component
        let samples = (0..600)
            .map(|i| {
                let t = i as f64 / 30.0;
                let phase = 2.0 * PI * 2.0 * t;
                [1.0 + 0.2 * phase.sin(), 0.0, 1e-9 * phase.sin()]
            })
            .collect();
        let rec = Recording::new("p", Activity::ScL3, 30.0, samples, Annotations::default()).unwrap();
        let f = extract_features(&rec, &participant(1.2, 25.0), None).unwrap();
        assert!((f.vp - 100.0).abs() < 1e-9);
        assert!(f.mp == 0.0 && f.ap < 1e-9);
    }

    #[test]
    fn analytic_six_minute_walk_features() {
        // 2 Hz steps for 120 s, 120 m walked, 1.5 m tall, 40 kg
        let rec = z_sine(Activity::SixMwt, 2.0, 1.0, 120.0, Some(120.0));
        let ex = extract_features_detailed(&rec, &participant(1.5, 40.0), None).unwrap();
        let f = ex.features;
        assert_eq!(ex.steps, 240);
        assert_eq!(ex.distance_source, DistanceSource::Measured);

        // brute-force power: time-domain mean square of the mean-removed signal
        let z = rec.axis_si(2);
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let oracle_power = z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / z.len() as f64 / 40.0;
        assert!((oracle_power - 0.5 / 40.0).abs() < 1e-12);

        assert!((f.sf - 2.0).abs() < 1e-12);
        assert!((f.sl - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.sp - 2.0 / 3.0).abs() < 1e-12);
        assert!((ex.axis_power[2] - oracle_power).abs() < 1e-12);
        assert!((f.tp - 0.5 / 40.0).abs() < 1e-12);
        assert!((f.fi - (0.5 / 40.0) / 1.0).abs() < 1e-12);
        assert!((f.ap - 100.0).abs() < 1e-9);
    }

    #[test]
    fn imputation_and_configuration_errors() {
        let rec = z_sine(Activity::HundredMrw, 2.0, 1.0, 30.0, None);
        let p = participant(1.3, 30.0);
        assert!(matches!(
            extract_features(&rec, &p, None),
            Err(FeatureError::Config { .. })
        ));
        let model = DistanceModel {
            participant_id: "p".into(),
            slope: 0.0,
            intercept: 0.5,
            fitted_on: vec![],
            reliable: true,
        };
        let ex = extract_features_detailed(&rec, &p, Some(&model)).unwrap();
        assert_eq!(ex.distance_source, DistanceSource::Imputed);
        assert!((ex.distance_m - 0.5 * 60.0).abs() < 1e-12);

        // nominal distance is never overridden
        let sc = z_sine(Activity::ScL2, 2.0, 1.0, 30.0, Some(99.0));
        let ex = extract_features_detailed(&sc, &p, Some(&model)).unwrap();
        assert_eq!(ex.distance_m, 25.0);
        assert_eq!(ex.distance_source, DistanceSource::Nominal);
    }

    #[test]
    fn zero_steps_and_zero_power_fail() {
        let flat = Recording::new("p", Activity::ScL1, 30.0, vec![[1.0, 0.0, 0.0]; 90], Annotations::default()).unwrap();
        assert!(matches!(
            extract_features(&flat, &participant(1.0, 20.0), None),
            Err(FeatureError::Feature { .. })
        ));
    }

    #[test]
    fn constant_step_length_regression() {
        let points: Vec<CalibrationPoint> = [(50usize, 60.0), (50, 40.0), (50, 30.0), (50, 22.0), (50, 17.0)]
            .iter()
            .zip(Activity::CALIBRATION)
            .map(|(&(steps, duration_s), activity)| CalibrationPoint { activity, steps, duration_s })
            .collect();
        let m = DistanceModel::fit_points("p", &points).unwrap();
        assert!(m.slope.abs() < 1e-12);
        assert!((m.intercept - 0.5).abs() < 1e-12);
        assert!((m.predict_distance(300, 120.0) - 150.0).abs() < 1e-9);
        assert!(m.reliable);
    }

    #[test]
    fn exact_linear_regression_recovers_parameters() {
        // step length 0.1 + 0.15 * SF; pick step counts, solve for duration
        let points: Vec<CalibrationPoint> = [30usize, 36, 42, 50, 60]
            .iter()
            .zip(Activity::CALIBRATION)
            .map(|(&steps, activity)| {
                let sl = 25.0 / steps as f64;
                let sf = (sl - 0.1) / 0.15;
                CalibrationPoint { activity, steps, duration_s: steps as f64 / sf }
            })
            .collect();
        let m = DistanceModel::fit_points("p", &points).unwrap();
        assert!((m.slope - 0.15).abs() < 1e-9, "{}", m.slope);
        assert!((m.intercept - 0.1).abs() < 1e-9, "{}", m.intercept);
    }

    #[test]
    fn model_needs_two_calibrations() {
        let p = CalibrationPoint { activity: Activity::ScL1, steps: 40, duration_s: 30.0 };
        assert!(matches!(DistanceModel::fit_points("p", &[p]), Err(FeatureError::Model(_))));
        assert!(fit_distance_model(&[]).is_err());
    }

    #[test]
    fn calibration_with_too_few_steps_names_recording() {
        let a = z_sine(Activity::ScL1, 1.0, 1.0, 4.0, None);
        let b = z_sine(Activity::ScL2, 2.0, 1.0, 20.0, None);
        match fit_distance_model(&[&a, &b]) {
            Err(FeatureError::Data { recording, .. }) => assert_eq!(recording, "p/SC-L1"),
            other => panic!("{other:?}"),
        }
    }
}
