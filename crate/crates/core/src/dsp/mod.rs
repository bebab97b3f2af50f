//! Signal-processing primitives.

mod filter;
mod spectrum;
mod steps;
mod window;

use thiserror::Error;

pub use filter::{lowpass, Biquad, MIN_FILTER_LEN};
pub use spectrum::{psd, PowerSpectrum};
pub use steps::{count_steps, find_peaks, step_peaks, MIN_STEP_INTERVAL_S, PEAK_THRESHOLD_SD, STEP_CUTOFF_HZ};
pub use window::{segment, window_len_for_seconds, WindowBatch, WindowOrigin, WINDOW_LENGTHS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("parameter error: {0}")]
    Parameter(String),
}
