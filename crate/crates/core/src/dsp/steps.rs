use super::{lowpass, DspError};

/// Low-pass cutoff applied before peak picking.
pub const STEP_CUTOFF_HZ: f64 = 5.0;
/// Peaks must exceed this multiple of the filtered signal's standard deviation.
pub const PEAK_THRESHOLD_SD: f64 = 0.3;
/// Minimum spacing between steps (4 steps/s upper bound on cadence).
pub const MIN_STEP_INTERVAL_S: f64 = 0.25;

/// Counts steps on the anteroposterior axis: one peak per step.
///
/// The signal is mean-removed and low-passed at 5 Hz; a peak is a local
/// maximum above `0.3 * sd` and at least 0.25 s from any taller peak.
pub fn count_steps(z: &[f64], rate_hz: f64) -> Result<usize, DspError> {
    Ok(step_peaks(z, rate_hz)?.len())
}

/// Sample indices of detected steps, ascending.
pub fn step_peaks(z: &[f64], rate_hz: f64) -> Result<Vec<usize>, DspError> {
    if !(rate_hz > 0.0) || (z.len() as f64) < 2.0 * rate_hz {
        return Err(DspError::Parameter(format!(
            "step counting needs at least 2 s of data, got {} samples at {rate_hz} Hz",
            z.len()
        )));
    }
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let centered: Vec<f64> = z.iter().map(|v| v - mean).collect();
    let filtered = lowpass(&centered, rate_hz, STEP_CUTOFF_HZ)?;

    let fmean = filtered.iter().sum::<f64>() / filtered.len() as f64;
    let var = filtered.iter().map(|v| (v - fmean).powi(2)).sum::<f64>() / filtered.len() as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(Vec::new());
    }
    let threshold = fmean + PEAK_THRESHOLD_SD * sd;
    let min_gap = ((MIN_STEP_INTERVAL_S * rate_hz).floor() as usize).max(1);
    Ok(find_peaks(&filtered, threshold, min_gap))
}

/// Local maxima above `threshold`, thinned so that no two retained peaks are
/// closer than `min_gap` samples (taller peaks win, earlier on ties).
pub fn find_peaks(x: &[f64], threshold: f64, min_gap: usize) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    // the left-edge rule makes a flat top count once
    let candidates: Vec<usize> = (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > threshold)
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        x[candidates[b]]
            .total_cmp(&x[candidates[a]])
            .then(candidates[a].cmp(&candidates[b]))
    });
    let mut keep = vec![true; candidates.len()];
    for &ci in &order {
        if !keep[ci] {
            continue;
        }
        let pos = candidates[ci];
        let mut j = ci;
        while j > 0 && pos - candidates[j - 1] < min_gap {
            j -= 1;
            keep[j] = false;
        }
        let mut j = ci + 1;
        while j < candidates.len() && candidates[j] - pos < min_gap {
            keep[j] = false;
            j += 1;
        }
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}
