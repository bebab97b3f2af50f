use serde::{Deserialize, Serialize};

use super::DspError;
use crate::data::{Activity, Recording};

/// Window lengths in samples. Each corresponds to one of the nominal windows
/// of 0.3, 1, 1.6, 3, 3.3 and 5 s at 30 Hz.
pub const WINDOW_LENGTHS: [usize; 6] = [10, 30, 50, 90, 100, 150];

/// Maps a nominal window duration in seconds to its canonical sample count.
pub fn window_len_for_seconds(secs: f64) -> Option<usize> {
    const SECONDS: [f64; 6] = [0.3, 1.0, 1.6, 3.0, 3.3, 5.0];
    SECONDS
        .iter()
        .position(|&s| (s - secs).abs() < 1e-9)
        .map(|i| WINDOW_LENGTHS[i])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub participant_id: String,
    pub activity: Activity,
}

/// Non-overlapping fixed-length raw windows in g, `[x, y, z]` per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBatch {
    pub window_len: usize,
    pub windows: Vec<Vec<[f64; 3]>>,
    pub provenance: Vec<WindowOrigin>,
    /// Recordings that were shorter than one window and produced nothing.
    pub too_short: Vec<WindowOrigin>,
}

impl WindowBatch {
    pub fn empty(window_len: usize) -> Self {
        WindowBatch {
            window_len,
            windows: Vec::new(),
            provenance: Vec::new(),
            too_short: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn append(&mut self, mut other: WindowBatch) {
        assert_eq!(self.window_len, other.window_len, "window length mismatch");
        self.windows.append(&mut other.windows);
        self.provenance.append(&mut other.provenance);
        self.too_short.append(&mut other.too_short);
    }

    /// Subset of windows whose origin satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&WindowOrigin) -> bool) -> WindowBatch {
        let mut out = WindowBatch::empty(self.window_len);
        for (w, o) in self.windows.iter().zip(&self.provenance) {
            if keep(o) {
                out.windows.push(w.clone());
                out.provenance.push(o.clone());
            }
        }
        out
    }

    /// Row-major flattening `[x0, y0, z0, x1, ...]` for the classical models.
    pub fn flattened(&self) -> Vec<Vec<f64>> {
        self.windows
            .iter()
            .map(|w| w.iter().flat_map(|s| s.iter().copied()).collect())
            .collect()
    }
}

/// Splits a recording into `floor(n / window_len)` consecutive windows,
/// discarding any trailing partial window.
pub fn segment(recording: &Recording, window_len: usize) -> Result<WindowBatch, DspError> {
    if !WINDOW_LENGTHS.contains(&window_len) {
        return Err(DspError::Parameter(format!(
            "window length {window_len} is not one of {WINDOW_LENGTHS:?}"
        )));
    }
    let origin = WindowOrigin {
        participant_id: recording.participant_id().to_string(),
        activity: recording.activity(),
    };
    let mut batch = WindowBatch::empty(window_len);
    let samples = recording.samples();
    if samples.len() < window_len {
        log::warn!(
            "recording {} has {} samples, shorter than one {window_len}-sample window",
            recording.label(),
            samples.len()
        );
        batch.too_short.push(origin);
        return Ok(batch);
    }
    for chunk in samples.chunks_exact(window_len) {
        batch.windows.push(chunk.to_vec());
        batch.provenance.push(origin.clone());
    }
    Ok(batch)
}
