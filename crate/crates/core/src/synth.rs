//! Parametric gait-signal generator.
//!
//! Every axis carries a fundamental at the cadence plus a half-amplitude
//! second harmonic. The anteroposterior axis uses `sin θ - 0.5 cos 2θ`,
//! which peaks once per cycle at `θ = π/2 + 2πm`, so the true step times are
//! `(m + 1/4) / cadence`. Amplitudes are set so that each axis's variance is
//! its share of `total_rms²`.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Activity, Annotations, DataError, Dataset, Group, ParticipantRecord, Recording, DEFAULT_RATE_HZ, SENSOR_RANGE_G};
use crate::seed;
use crate::STANDARD_GRAVITY;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Mean power of `sin + 0.5 sin(2·)` over whole cycles.
const WAVEFORM_POWER: f64 = 0.5 + 0.125;

/// Phase offsets `(fundamental, harmonic)` per axis `[x, y, z]`.
const PHASES: [(f64, f64); 3] = [
    (std::f64::consts::FRAC_PI_3, 0.0),
    (2.0 * std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_4),
    (0.0, -std::f64::consts::FRAC_PI_2),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Steps per second.
    pub cadence: f64,
    /// Metres per step (not height-normalized).
    pub step_length: f64,
    /// `[vp, mp, ap]` in percent.
    pub axial_split: [f64; 3],
    /// Root-mean-square of the noise-free dynamic acceleration, m/s².
    pub total_rms: f64,
    /// Per-axis white-noise standard deviation, m/s².
    pub noise_sigma: f64,
    pub duration: f64,
    pub rate_hz: f64,
    pub seed: u64,
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Parameter(m));
        if !(0.5..=4.5).contains(&self.cadence) {
            return bad(format!("cadence {} outside [0.5, 4.5] steps/s", self.cadence));
        }
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return bad(format!("step length must be positive, got {}", self.step_length));
        }
        if self.axial_split.iter().any(|v| !(*v >= 0.0)) {
            return bad(format!("axial split {:?} has a negative share", self.axial_split));
        }
        let sum: f64 = self.axial_split.iter().sum();
        if (sum - 100.0).abs() > 1e-9 {
            return bad(format!("axial split sums to {sum}, not 100"));
        }
        if !(self.total_rms > 0.0 && self.total_rms.is_finite()) {
            return bad(format!("total_rms must be positive, got {}", self.total_rms));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.duration >= 2.0 && self.duration.is_finite()) {
            return bad(format!("duration {} s is shorter than 2 s", self.duration));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("rate must be positive, got {}", self.rate_hz));
        }
        Ok(())
    }

    /// Per-axis waveform amplitude in m/s².
    pub fn amplitudes(&self) -> [f64; 3] {
        self.axial_split
            .map(|share| (share / 100.0 * self.total_rms * self.total_rms / WAVEFORM_POWER).sqrt())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.rate_hz).round() as usize
    }

    /// Step peak times that a peak detector can see (not at either end
    /// sample).
    pub fn true_steps(&self) -> u32 {
        let n = self.n_samples();
        let (lo, hi) = (1.0 / self.rate_hz, (n as f64 - 2.0) / self.rate_hz);
        (0..)
            .map(|m| (m as f64 + 0.25) / self.cadence)
            .take_while(|t| *t <= hi)
            .filter(|t| *t >= lo)
            .count() as u32
    }
}

/// Samples in g, `[x, y, z]`, with gravity on x, clamped to the sensor range.
pub fn gen_samples(params: &GaitParams) -> Result<Vec<[f64; 3]>, SynthError> {
    params.validate()?;
    let amp = params.amplitudes();
    let mut rng = seed::rng(params.seed, &[seed::tag("synth-noise")]);
    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let omega = 2.0 * std::f64::consts::PI * params.cadence;
    let n = params.n_samples();
    let range = SENSOR_RANGE_G;
    Ok((0..n)
        .map(|k| {
            let theta = omega * k as f64 / params.rate_hz;
            let mut s = [0.0; 3];
            for a in 0..3 {
                let (p1, p2) = PHASES[a];
                let mut v = amp[a] * ((theta + p1).sin() + 0.5 * (2.0 * theta + p2).sin());
                if params.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                let gravity = if a == 0 { 1.0 } else { 0.0 };
                s[a] = (v / STANDARD_GRAVITY + gravity).clamp(-range, range);
            }
            s
        })
        .collect())
}

pub fn gen_recording(params: &GaitParams, participant: &ParticipantRecord, activity: Activity) -> Result<Recording, SynthError> {
    let samples = gen_samples(params)?;
    let annotations = Annotations {
        observed_steps: Some(params.true_steps()),
        measured_distance_m: Some(params.step_length * params.cadence * params.duration),
        truncated: false,
    };
    Ok(Recording::new(
        participant.id.clone(),
        activity,
        params.rate_hz,
        samples,
        annotations,
    )?)
}

/// `(mean, sd)` of one feature across a group.
pub type MeanSd = (f64, f64);

/// Group distribution of the generator inputs for one activity, in the
/// units features are reported in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityStats {
    pub sf: MeanSd,
    /// Step length over height.
    pub sl: MeanSd,
    pub vp: MeanSd,
    pub mp: MeanSd,
    pub ap: MeanSd,
    /// Reported total power (per kg, ×10⁶); drawn log-normally.
    pub tp: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPreset {
    /// Indexed like [`Activity::ALL`].
    pub activities: [ActivityStats; 7],
}

impl GroupPreset {
    pub fn stats(&self, activity: Activity) -> &ActivityStats {
        let i = Activity::ALL.iter().position(|a| *a == activity).expect("activity in ALL");
        &self.activities[i]
    }
}

const fn row(sf: MeanSd, sl: MeanSd, tp: MeanSd, vp: MeanSd, mp: MeanSd, ap: MeanSd) -> ActivityStats {
    ActivityStats { sf, sl, vp, mp, ap, tp }
}

/// Typically developing children, activity rows SC-L1..SC-L5, 6MWT, 100MRW.
pub const TD_PRESET: [ActivityStats; 7] = [
    row((1.32, 0.13), (0.26, 0.03), (72.79, 79.91), (31.16, 5.03), (36.77, 8.0), (32.07, 6.63)),
    row((1.71, 0.19), (0.33, 0.03), (210.81, 238.59), (33.36, 4.72), (36.7, 5.21), (29.94, 4.45)),
    row((2.2, 0.49), (0.41, 0.03), (779.58, 1044.28), (39.7, 9.86), (34.99, 9.41), (25.31, 2.48)),
    row((2.45, 0.36), (0.45, 0.04), (1900.05, 1976.52), (38.02, 20.0), (43.01, 25.69), (18.97, 6.33)),
    row((2.97, 0.58), (0.51, 0.06), (7124.66, 8176.64), (37.71, 14.02), (40.51, 17.13), (21.78, 4.77)),
    row((2.32, 0.19), (0.45, 0.04), (915.13, 612.32), (45.77, 8.42), (31.88, 9.56), (22.34, 2.84)),
    row((2.81, 0.75), (0.51, 0.06), (7304.77, 5260.62), (42.73, 17.1), (40.58, 18.27), (16.69, 1.3)),
];

/// Children with DMD, same row order.
pub const DMD_PRESET: [ActivityStats; 7] = [
    row((1.12, 0.21), (0.24, 0.03), (45.53, 47.33), (36.14, 11.71), (32.78, 8.99), (31.08, 7.52)),
    row((1.59, 0.15), (0.32, 0.04), (123.95, 71.68), (35.14, 8.93), (29.4, 6.69), (35.46, 6.53)),
    row((2.11, 0.24), (0.38, 0.04), (414.54, 259.21), (32.58, 5.74), (35.94, 5.08), (31.48, 2.8)),
    row((2.49, 0.4), (0.42, 0.04), (1463.23, 801.67), (24.99, 6.8), (49.99, 10.16), (25.01, 6.25)),
    row((2.68, 0.5), (0.47, 0.09), (3361.3, 2854.13), (26.26, 12.03), (48.09, 14.97), (25.66, 6.64)),
    row((2.09, 0.45), (0.37, 0.06), (705.78, 1094.77), (35.87, 6.73), (33.27, 6.06), (30.86, 4.03)),
    row((2.38, 0.64), (0.43, 0.08), (3293.61, 3389.67), (31.16, 12.01), (44.36, 14.93), (24.48, 5.08)),
];

/// The twelve children of the reference study: `(age, weight kg, height m, NSAA)`.
pub const TD_CHILDREN: [(u32, f64, f64, u8); 6] = [
    (11, 38.4, 1.476, 34),
    (3, 20.0, 1.063, 31),
    (11, 44.5, 1.44, 34),
    (12, 57.7, 1.556, 34),
    (5, 20.3, 1.193, 34),
    (9, 41.8, 1.329, 34),
];
pub const DMD_CHILDREN: [(u32, f64, f64, u8); 6] = [
    (5, 34.7, 1.27, 31),
    (12, 52.6, 1.45, 29),
    (10, 38.5, 1.245, 26),
    (15, 63.7, 1.533, 15),
    (7, 29.8, 1.33, 13),
    (5, 22.9, 1.118, 30),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub dmd: GroupPreset,
    pub td: GroupPreset,
    pub rate_hz: f64,
    /// Noise standard deviation as a fraction of `total_rms`.
    pub noise_ratio: f64,
    /// Length of the timed walk; the clinical protocol uses 360 s.
    pub six_minute_s: f64,
}

impl CohortSpec {
    /// Group distributions from the reference study's feature table.
    pub fn paper_shape() -> CohortSpec {
        CohortSpec {
            dmd: GroupPreset { activities: DMD_PRESET },
            td: GroupPreset { activities: TD_PRESET },
            rate_hz: DEFAULT_RATE_HZ,
            noise_ratio: 0.05,
            six_minute_s: 360.0,
        }
    }

    /// Both groups drawn from the TD distribution.
    pub fn null() -> CohortSpec {
        CohortSpec {
            dmd: GroupPreset { activities: TD_PRESET },
            ..CohortSpec::paper_shape()
        }
    }

    pub fn preset(&self, group: Group) -> &GroupPreset {
        match group {
            Group::Dmd => &self.dmd,
            Group::Td => &self.td,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.rate_hz > 0.0) || !(self.noise_ratio >= 0.0) || !(self.six_minute_s >= 2.0) {
            return Err(SynthError::Parameter(format!(
                "cohort needs rate > 0, noise_ratio >= 0 and six_minute_s >= 2 (got {}, {}, {})",
                self.rate_hz, self.noise_ratio, self.six_minute_s
            )));
        }
        Ok(())
    }
}

/// Participant `k` (0-based) of `group`; anthropometrics cycle through the
/// reference children.
pub fn participant(group: Group, k: usize) -> ParticipantRecord {
    let table = match group {
        Group::Dmd => &DMD_CHILDREN,
        Group::Td => &TD_CHILDREN,
    };
    let (age, weight_kg, height_m, nsaa) = table[k % table.len()];
    ParticipantRecord {
        id: format!("{}{:02}", group.as_str(), k + 1),
        group,
        age,
        weight_kg,
        height_m,
        nsaa: Some(nsaa),
    }
}

fn draw_normal(rng: &mut impl Rng, (mean, sd): MeanSd) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).expect("finite sd").sample(rng)
    } else {
        mean
    }
}

fn draw_lognormal(rng: &mut impl Rng, (mean, sd): MeanSd) -> f64 {
    if sd > 0.0 {
        let s2 = (1.0 + (sd / mean).powi(2)).ln();
        LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt()).expect("finite params").sample(rng)
    } else {
        mean
    }
}

/// Draws one participant's walk parameters for `activity`.
pub fn draw_params(
    spec: &CohortSpec,
    person: &ParticipantRecord,
    activity: Activity,
    seed: u64,
) -> GaitParams {
    let stats = spec.preset(person.group).stats(activity);
    let mut rng = seed::rng(seed, &[seed::tag(&person.id), seed::tag(activity.as_str()), seed::tag("params")]);
    let cadence = draw_normal(&mut rng, stats.sf).clamp(0.6, 4.4);
    let sl = draw_normal(&mut rng, stats.sl).max(0.1);
    let mut split = [
        draw_normal(&mut rng, stats.vp).max(1.0),
        draw_normal(&mut rng, stats.mp).max(1.0),
        draw_normal(&mut rng, stats.ap).max(1.0),
    ];
    let sum: f64 = split.iter().sum();
    split.iter_mut().for_each(|v| *v *= 100.0 / sum);
    // restore an exact sum after rounding
    split[1] = 100.0 - split[0] - split[2];
    let tp = draw_lognormal(&mut rng, stats.tp);
    let total_rms = (tp / crate::features::TP_REPORT_SCALE * person.weight_kg).sqrt();

    let step_length = sl * person.height_m;
    let speed = step_length * cadence;
    let duration = match activity.nominal_distance() {
        Some(d) => d / speed,
        None if activity == Activity::SixMwt => spec.six_minute_s,
        None => 100.0 / speed,
    }
    .max(2.0);
    GaitParams {
        cadence,
        step_length,
        axial_split: split,
        total_rms,
        noise_sigma: spec.noise_ratio * total_rms,
        duration,
        rate_hz: spec.rate_hz,
        seed: seed::derive(seed, &[seed::tag(&person.id), seed::tag(activity.as_str()), seed::tag("signal")]),
    }
}

/// `n_per_group` children per group, every listed activity each.
/// Deterministic given `seed`.
pub fn gen_cohort(spec: &CohortSpec, n_per_group: usize, activities: &[Activity], seed: u64) -> Result<Dataset, SynthError> {
    spec.validate()?;
    if n_per_group == 0 {
        return Err(SynthError::Parameter("n_per_group must be >= 1".into()));
    }
    let participants: Vec<ParticipantRecord> = [Group::Td, Group::Dmd]
        .into_iter()
        .flat_map(|g| (0..n_per_group).map(move |k| participant(g, k)))
        .collect();
    let jobs: Vec<(&ParticipantRecord, Activity)> = participants
        .iter()
        .flat_map(|p| activities.iter().map(move |a| (p, *a)))
        .collect();
    let recordings = jobs
        .par_iter()
        .map(|(p, a)| gen_recording(&draw_params(spec, p, *a, seed), p, *a))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(participants, recordings)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;
    use crate::features::{extract_features, feature_table};

    fn params(cadence: f64, duration: f64, split: [f64; 3], noise: f64) -> GaitParams {
        GaitParams {
            cadence,
            step_length: 0.6,
            axial_split: split,
            total_rms: 2.0,
            noise_sigma: noise,
            duration,
            rate_hz: 30.0,
            seed: 1,
        }
    }

    fn child() -> ParticipantRecord {
        participant(Group::Td, 0)
    }

    #[test]
    fn noise_free_step_count_is_exact() {
        let p = params(2.0, 10.0, [40.0, 30.0, 30.0], 0.0);
        let rec = gen_recording(&p, &child(), Activity::SixMwt).unwrap();
        assert_eq!(dsp::count_steps(&rec.axis_si(2), 30.0).unwrap(), 20);
        assert_eq!(rec.annotations().observed_steps, Some(20));
        assert!((rec.annotations().measured_distance_m.unwrap() - 0.6 * 2.0 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn two_second_strides_differ_by_cadence() {
        assert_eq!(params(2.5, 2.0, [40.0, 30.0, 30.0], 0.0).true_steps(), 5);
        assert_eq!(params(2.0, 2.0, [40.0, 30.0, 30.0], 0.0).true_steps(), 4);
    }

    #[test]
    fn single_axis_split_extracts_full_vertical_power() {
        let p = params(2.0, 20.0, [100.0, 0.0, 0.0], 0.0);
        let rec = gen_recording(&p, &child(), Activity::SixMwt);
        // no anteroposterior motion means no steps to find
        let rec = rec.unwrap();
        assert!(extract_features(&rec, &child(), None).is_err());
        let vp = {
            let x = dsp::psd(&rec.axis_si(0), 30.0).unwrap().integral();
            let y = dsp::psd(&rec.axis_si(1), 30.0).unwrap().integral();
            let z = dsp::psd(&rec.axis_si(2), 30.0).unwrap().integral();
            x / (x + y + z) * 100.0
        };
        assert!((vp - 100.0).abs() < 0.5, "{vp}");
    }

    #[test]
    fn dominant_vertical_split_survives_extraction() {
        let p = params(2.0, 20.0, [98.0, 0.0, 2.0], 0.0);
        let rec = gen_recording(&p, &child(), Activity::SixMwt).unwrap();
        let f = extract_features(&rec, &child(), None).unwrap();
        assert!((f.vp - 98.0).abs() < 0.5 && (f.ap - 2.0).abs() < 0.5, "{f:?}");
    }

    #[test]
    fn noise_free_extraction_matches_generator() {
        for (cadence, split) in [(1.3, [31.0, 37.0, 32.0]), (2.3, [45.0, 32.0, 23.0]), (3.4, [20.0, 50.0, 30.0])] {
            let p = params(cadence, 60.0, split, 0.0);
            let rec = gen_recording(&p, &child(), Activity::SixMwt).unwrap();
            let f = extract_features(&rec, &child(), None).unwrap();
            assert!((f.sf - cadence).abs() <= 1.0 / 60.0, "sf {} vs {cadence}", f.sf);
            for (got, want) in [f.vp, f.mp, f.ap].iter().zip(split) {
                assert!((got - want).abs() < 0.5, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let ok = params(2.0, 10.0, [40.0, 30.0, 30.0], 0.0);
        for bad in [
            GaitParams { cadence: 5.0, ..ok.clone() },
            GaitParams { duration: 1.9, ..ok.clone() },
            GaitParams { axial_split: [40.0, 30.0, 31.0], ..ok.clone() },
            GaitParams { total_rms: 0.0, ..ok.clone() },
        ] {
            assert!(matches!(gen_samples(&bad), Err(SynthError::Parameter(_))));
        }
    }

    #[test]
    fn paper_shape_cohort_has_study_shape() {
        let mut spec = CohortSpec::paper_shape();
        spec.six_minute_s = 30.0;
        let ds = gen_cohort(&spec, 6, &Activity::ALL, 7).unwrap();
        assert_eq!(ds.participants.len(), 12);
        assert_eq!(ds.recordings.len(), 84);
        assert_eq!(ds.participant("DMD04").unwrap().height_m, 1.533);
        let one = gen_cohort(&spec, 1, &[Activity::SixMwt], 7).unwrap();
        assert_eq!(one.participants.len(), 2);
    }

    #[test]
    fn cohort_is_deterministic() {
        let mut spec = CohortSpec::paper_shape();
        spec.six_minute_s = 20.0;
        let a = gen_cohort(&spec, 2, &Activity::ALL, 3).unwrap();
        let b = gen_cohort(&spec, 2, &Activity::ALL, 3).unwrap();
        assert_eq!(a, b);
        let c = gen_cohort(&spec, 2, &Activity::ALL, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn extracted_six_minute_means_track_generating_means() {
        let mut spec = CohortSpec::paper_shape();
        spec.six_minute_s = 120.0;
        let ds = gen_cohort(&spec, 6, &[Activity::SixMwt], 11).unwrap();
        let table = feature_table(&ds);
        assert!(table.failures.is_empty(), "{:?}", table.failures);
        for g in Group::BOTH {
            let stats = spec.preset(g).stats(Activity::SixMwt);
            let rows: Vec<_> = table.rows.iter().filter(|r| r.group == g).collect();
            let mean = |f: fn(&crate::features::FeatureVector) -> f64| {
                rows.iter().map(|r| f(&r.extraction.features)).sum::<f64>() / rows.len() as f64
            };
            for (name, got, (m, sd)) in [
                ("sf", mean(|f| f.sf), stats.sf),
                ("sl", mean(|f| f.sl), stats.sl),
                ("vp", mean(|f| f.vp), stats.vp),
                ("mp", mean(|f| f.mp), stats.mp),
                ("ap", mean(|f| f.ap), stats.ap),
                ("tp", mean(|f| f.tp * 1e6), stats.tp),
            ] {
                assert!((got - m).abs() <= sd, "{g} {name}: {got} vs {m} ({sd})");
            }
        }
    }
}
