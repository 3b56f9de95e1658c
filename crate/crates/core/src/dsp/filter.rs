//! IIR building blocks: Butterworth biquad cascades, a first-difference
//! high-pass proxy, and block-average decimation.

use std::f64::consts::PI;

use super::{DspError, SignalWindow};

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    // a0 normalized to 1
    a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    fn from_raw(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [a1 / a0, a2 / a0], s1: 0.0, s2: 0.0 }
    }

    /// Bilinear-transform low-pass section with cutoff prewarped at `f0`.
    pub fn lowpass(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let b1 = 1.0 - cos;
        Self::from_raw([b1 / 2.0, b1, b1 / 2.0], 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    /// Bilinear-transform high-pass section with cutoff prewarped at `f0`.
    pub fn highpass(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let b0 = (1.0 + cos) / 2.0;
        Self::from_raw([b0, -(1.0 + cos), b0], 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// DC gain H(1).
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Puts the section into the steady state it would reach after an
    /// infinitely long constant input `u`. Returns the steady output.
    pub fn settle(&mut self, u: f64) -> f64 {
        let y = self.dc_gain() * u;
        self.s2 = self.b[2] * u - self.a[1] * y;
        self.s1 = self.b[1] * u - self.a[0] * y + self.s2;
        y
    }

    /// Complex frequency response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> (f64, f64) {
        // H = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2), z^-1 = e^{-jw}
        let (s1, c1) = (-w).sin_cos();
        let (s2, c2) = (-2.0 * w).sin_cos();
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Q factors of the second-order sections of an even-order Butterworth filter.
fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    (0..order / 2).map(move |k| {
        let theta = (2 * k + 1) as f64 * PI / (2 * order) as f64;
        1.0 / (2.0 * theta.cos())
    })
}

/// Cascade of biquads processed in series.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    sections: Vec<Biquad>,
}

impl Cascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn butterworth_lowpass(fs: f64, fc: f64, order: usize) -> Self {
        Self::new(butterworth_qs(order).map(|q| Biquad::lowpass(fs, fc, q)).collect())
    }

    pub fn butterworth_highpass(fs: f64, fc: f64, order: usize) -> Self {
        Self::new(butterworth_qs(order).map(|q| Biquad::highpass(fs, fc, q)).collect())
    }

    /// Butterworth high-pass at `lo` followed by Butterworth low-pass at `hi`,
    /// each of the given order.
    pub fn butterworth_bandpass(fs: f64, lo: f64, hi: f64, order: usize) -> Self {
        let mut sections: Vec<Biquad> = butterworth_qs(order).map(|q| Biquad::highpass(fs, lo, q)).collect();
        sections.extend(butterworth_qs(order).map(|q| Biquad::lowpass(fs, hi, q)));
        Self::new(sections)
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }

    /// Steady-state initialization for a constant input `u`.
    pub fn settle(&mut self, u: f64) {
        self.sections.iter_mut().fold(u, |acc, s| s.settle(acc));
    }

    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                re.hypot(im)
            })
            .product()
    }

    /// Group delay in samples at frequency `f`, by central difference of the
    /// per-section phase.
    pub fn group_delay(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let h = 1e-5;
        self.sections
            .iter()
            .map(|s| {
                let p = |w: f64| {
                    let (re, im) = s.response(w);
                    im.atan2(re)
                };
                let mut d = p(w + h) - p(w - h);
                if d > PI {
                    d -= 2.0 * PI;
                } else if d < -PI {
                    d += 2.0 * PI;
                }
                -d / (2.0 * h)
            })
            .sum()
    }
}

/// Butterworth order used for each edge of [`bandpass`].
pub const BANDPASS_EDGE_ORDER: usize = 4;

fn check_band(fs: f64, lo: f64, hi: f64) -> Result<(), DspError> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(DspError::Parameter(format!(
            "band-pass edges must satisfy 0 < lo < hi < fs/2, got lo={lo}, hi={hi}, fs={fs}"
        )));
    }
    Ok(())
}

/// Zero-initialized band-pass: 4th-order Butterworth high-pass at `lo`
/// cascaded with a 4th-order Butterworth low-pass at `hi`, run forward only.
pub fn bandpass(x: &SignalWindow, lo: f64, hi: f64) -> Result<SignalWindow, DspError> {
    let mut filt = bandpass_filter(x.fs(), lo, hi)?;
    let out = x.samples().iter().map(|&v| filt.process(v)).collect();
    SignalWindow::new(x.fs(), out)
}

/// The filter behind [`bandpass`], for streaming use.
pub fn bandpass_filter(fs: f64, lo: f64, hi: f64) -> Result<Cascade, DspError> {
    check_band(fs, lo, hi)?;
    Ok(Cascade::butterworth_bandpass(fs, lo, hi, BANDPASS_EDGE_ORDER))
}

/// First difference `y[i] = x[i] - x[i-1]`, the high-pass used on the
/// microcontroller in place of a full band-pass. The first output is zero.
pub fn first_difference(x: &SignalWindow) -> SignalWindow {
    let s = x.samples();
    let mut out = Vec::with_capacity(s.len());
    out.push(0.0);
    out.extend(s.windows(2).map(|w| w[1] - w[0]));
    SignalWindow::new_unchecked(x.fs(), out)
}

/// Decimates by averaging non-overlapping blocks of `factor` samples. A
/// trailing partial block is dropped.
///
/// The block average is an FIR low-pass with nulls at multiples of the output
/// rate; it has no start-up transient, so a tone stays a pure tone.
pub fn block_decimate(x: &SignalWindow, factor: usize) -> Result<SignalWindow, DspError> {
    if factor == 0 {
        return Err(DspError::Parameter("decimation factor must be >= 1".into()));
    }
    let out: Vec<f64> = x.samples().chunks_exact(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect();
    if out.is_empty() {
        return Err(DspError::Parameter(format!(
            "window of {} samples is shorter than decimation factor {factor}",
            x.len()
        )));
    }
    SignalWindow::new(x.fs() / factor as f64, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(fs: f64, f: f64, secs: f64) -> SignalWindow {
        let n = (fs * secs) as usize;
        SignalWindow::new(fs, (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn zero_in_zero_out() {
        let x = SignalWindow::new(120.0, vec![0.0; 500]).unwrap();
        let y = bandpass(&x, 10.0, 40.0).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn passband_sine_keeps_level() {
        let x = sine(120.0, 20.0, 10.0);
        let y = bandpass(&x, 10.0, 40.0).unwrap();
        // skip the first second of transient
        let gain = rms(&y.samples()[120..]) / rms(&x.samples()[120..]);
        let db = 20.0 * gain.log10();
        assert!(db.abs() <= 3.0, "pass-band gain {db} dB");
    }

    #[test]
    fn low_sine_is_rejected() {
        let x = sine(120.0, 2.0, 20.0);
        let y = bandpass(&x, 10.0, 40.0).unwrap();
        let gain = rms(&y.samples()[600..]) / rms(&x.samples()[600..]);
        let db = 20.0 * gain.log10();
        assert!(db <= -20.0, "2 Hz gain {db} dB");
    }

    #[test]
    fn octave_outside_band_attenuated() {
        // probe the analytic response one octave below lo and above hi
        let fs = 500.0;
        let f = Cascade::butterworth_bandpass(fs, 10.0, 40.0, BANDPASS_EDGE_ORDER);
        for probe in [5.0, 80.0] {
            let db = 20.0 * f.magnitude(probe, fs).log10();
            assert!(db <= -20.0, "{probe} Hz: {db} dB");
        }
        let f = Cascade::butterworth_bandpass(120.0, 10.0, 40.0, BANDPASS_EDGE_ORDER);
        assert!(20.0 * f.magnitude(5.0, 120.0).log10() <= -20.0);
        for probe in [12.0, 20.0, 30.0, 38.0] {
            let db = 20.0 * f.magnitude(probe, 120.0).log10();
            assert!(db.abs() <= 3.0, "{probe} Hz: {db} dB");
        }
    }

    #[test]
    fn invalid_band_rejected() {
        let x = sine(120.0, 20.0, 1.0);
        assert!(bandpass(&x, 40.0, 10.0).is_err());
        assert!(bandpass(&x, 0.0, 10.0).is_err());
        assert!(bandpass(&x, 10.0, 60.0).is_err());
    }

    #[test]
    fn settle_removes_step_transient() {
        let mut f = Cascade::butterworth_bandpass(120.0, 10.0, 40.0, 4);
        f.settle(1.0);
        for _ in 0..100 {
            assert!(f.process(1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn group_delay_matches_impulse_response_centroid_of_tone() {
        // a slow-envelope 25 Hz burst is delayed by roughly the group delay
        let f = Cascade::butterworth_bandpass(120.0, 10.0, 40.0, 4);
        let gd = f.group_delay(25.0, 120.0);
        assert!(gd > 1.0 && gd < 6.0, "group delay {gd}");
    }

    #[test]
    fn block_decimate_averages() {
        let x = SignalWindow::new(8.0, (0..10).map(f64::from).collect()).unwrap();
        let y = block_decimate(&x, 4).unwrap();
        assert_eq!(y.samples(), &[1.5, 5.5]);
        assert_eq!(y.fs(), 2.0);
    }
}
