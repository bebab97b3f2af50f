use super::DspError;

/// Second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Digital 2nd-order Butterworth low-pass via the bilinear transform
    /// with frequency prewarping.
    pub fn butterworth_lowpass(rate_hz: f64, cutoff_hz: f64) -> Result<Self, DspError> {
        if !(cutoff_hz > 0.0 && cutoff_hz < rate_hz / 2.0) {
            return Err(DspError::Parameter(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) for rate {rate_hz} Hz",
                rate_hz / 2.0
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
        let k2 = k * k;
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k2);
        let b0 = k2 * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - sqrt2 * k + k2) * norm],
        })
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// |H(e^{jω})|² at `freq_hz`.
    pub fn magnitude_squared(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / rate_hz;
        // evaluate polynomials in z^-1 = e^{-jw}
        let eval = |c: [f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            re * re + im * im
        };
        eval(self.b) / eval([1.0, self.a[0], self.a[1]])
    }

    /// Transposed direct-form II state that a unit step settles into.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &[f64], init: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let (mut z1, mut z2) = (init[0], init[1]);
        x.iter()
            .map(|&v| {
                let y = b0 * v + z1;
                z1 = b1 * v - a1 * y + z2;
                z2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding and
    /// steady-state initial conditions, so constants pass through unchanged.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = PAD_LEN.min(n - 1);
        let first = x[0];
        let last = x[n - 1];
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        let zi = self.steady_state();
        let scaled = |s: f64| [zi[0] * s, zi[1] * s];

        let mut fwd = self.run(&ext, scaled(ext[0]));
        fwd.reverse();
        let mut back = self.run(&fwd, scaled(fwd[0]));
        back.reverse();
        back.drain(..pad);
        back.truncate(n);
        back
    }
}

/// Reflection padding length: three times the filter order plus one, as
/// is conventional for forward-backward filtering.
const PAD_LEN: usize = 9;
/// Minimum input length accepted by [`lowpass`].
pub const MIN_FILTER_LEN: usize = PAD_LEN;

/// Zero-phase 2nd-order Butterworth low-pass.
pub fn lowpass(signal: &[f64], rate_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>, DspError> {
    let filter = Biquad::butterworth_lowpass(rate_hz, cutoff_hz)?;
    if signal.len() < MIN_FILTER_LEN {
        return Err(DspError::Parameter(format!(
            "low-pass needs at least {MIN_FILTER_LEN} samples, got {}",
            signal.len()
        )));
    }
    Ok(filter.filtfilt(signal))
}
