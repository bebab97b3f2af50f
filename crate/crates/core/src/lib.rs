//! Single-accelerometer gait analysis.
//!
//! The crate covers the whole offline pipeline for triaxial acceleration
//! recorded at the lumbosacral junction:
//!
//! - [`data`]: participant/recording types, manifest + CSV persistence,
//!   resampling of jittered streams onto a uniform grid.
//! - [`dsp`]: zero-phase Butterworth low-pass, peak-based step counting,
//!   periodogram PSD, fixed-length windowing.
//! - [`features`]: the eight clinical gait features (SP, SF, SL, TP, VP, MP,
//!   AP, FI) and the per-subject distance model.
//! - [`ml`]: standardization, PCA/LDA and six classical classifiers.
//! - [`dl`]: a small 1-D CNN over raw windows.
//! - [`eval`]: leave-one-subject-out evaluation, vote aggregation, Welch
//!   t-tests, report rendering.
//! - [`synth`]: parametric gait-signal generator used as a test oracle.
//!
//! Axis convention throughout: x is vertical, y is mediolateral, z is
//! anteroposterior. Files hold acceleration in g; everything physical is
//! computed in m/s².

pub mod data;
pub mod dl;
pub mod dsp;
pub mod eval;
pub mod features;
pub mod ml;
pub mod seed;
pub mod synth;

pub use data::{Activity, Annotations, Dataset, Group, ParticipantRecord, Recording};
pub use features::FeatureVector;

/// Standard gravity, used to convert g-units to m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;
