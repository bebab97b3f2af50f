use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::DspError;

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    /// Bin centers from 0 to rate/2 (inclusive for even lengths).
    pub freqs: Vec<f64>,
    /// Power per hertz in each bin.
    pub density: Vec<f64>,
    pub bin_width: f64,
}

impl PowerSpectrum {
    /// Rectangle-rule integral, equal to the biased variance of the input.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }
}

/// Periodogram of the mean-removed signal with a rectangular window.
///
/// Bins strictly inside (0, rate/2) are doubled to fold in the negative
/// frequencies, so `integral()` equals `sum((x - mean)^2) / n`.
pub fn psd(signal: &[f64], rate_hz: f64) -> Result<PowerSpectrum, DspError> {
    let n = signal.len();
    if n < 2 {
        return Err(DspError::Parameter(format!(
            "PSD needs at least 2 samples, got {n}"
        )));
    }
    if !(rate_hz > 0.0) {
        return Err(DspError::Parameter(format!("rate must be positive, got {rate_hz}")));
    }
    let n_bins = n / 2 + 1;
    let bin_width = rate_hz / n as f64;
    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * bin_width).collect();

    if signal.iter().all(|&v| v == signal[0]) {
        return Ok(PowerSpectrum {
            freqs,
            density: vec![0.0; n_bins],
            bin_width,
        });
    }

    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let scale = 1.0 / (rate_hz * n as f64);
    let density = (0..n_bins)
        .map(|k| {
            let p = buf[k].norm_sqr() * scale;
            let nyquist = n % 2 == 0 && k == n / 2;
            if k == 0 || nyquist {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    Ok(PowerSpectrum {
        freqs,
        density,
        bin_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn biased_variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn constant_has_zero_density() {
        let s = psd(&[0.1; 33], 30.0).unwrap();
        assert!(s.density.iter().all(|&d| d == 0.0));
        assert_eq!(s.freqs.len(), 17);
    }

    #[test]
    fn bin_grid_is_increasing_to_nyquist() {
        let s = psd(&[0.0, 1.0, 0.0, -1.0, 0.0, 1.0], 30.0).unwrap();
        assert_eq!(s.freqs, vec![0.0, 5.0, 10.0, 15.0]);
        assert!(s.freqs.windows(2).all(|w| w[1] > w[0]));
        assert!(s.density.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn on_bin_sine_integrates_to_half_amplitude_squared() {
        let n = 600;
        let rate = 30.0;
        for (amp, k) in [(1.0, 40usize), (0.3, 7), (2.5, 123)] {
            let f = k as f64 * rate / n as f64;
            let x: Vec<f64> = (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / rate).sin())
                .collect();
            let s = psd(&x, rate).unwrap();
            let want = amp * amp / 2.0;
            assert!(((s.integral() - want) / want).abs() < 1e-6);
            // all the power sits in bin k
            assert!((s.density[k] * s.bin_width - want).abs() / want < 1e-9);
        }
    }

    #[test]
    fn parseval_on_odd_and_even_lengths() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [2usize, 3, 17, 64, 101, 1000] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) + 0.7).collect();
            let v = biased_variance(&x);
            let got = psd(&x, 30.0).unwrap().integral();
            assert!(((got - v) / v).abs() < 1e-9, "n={n}: {got} vs {v}");
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(psd(&[1.0], 30.0).is_err());
        assert!(psd(&[], 30.0).is_err());
    }
}
