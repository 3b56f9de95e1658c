//! Heart rate, respiratory rate and pulse transit time from detected peaks
//! or raw windows.

use rustfft::num_complex::Complex64;

use super::filter::block_decimate;
use super::hilbert::real_dft;
use super::peaks::PeakDetector;
use super::{smooth, DspError, PeakList, SignalWindow, VitalEstimate, VitalKind};

/// Respiratory band searched for the dominant spectral line (Hz).
pub const RR_BAND: (f64, f64) = (0.05, 0.78);
/// Rate the z-axis is decimated to before the spectral estimate.
pub const RR_DECIMATED_FS: f64 = 15.0;
pub const RR_WINDOW_S: f64 = 30.0;
/// Longest ACC1→ACC2 delay accepted as the same beat.
pub const PTT_GATE_S: f64 = 0.150;

/// Beats per minute over the span of the peak list.
pub fn heart_rate(p: &PeakList) -> Result<f64, DspError> {
    let idx = p.indices();
    if idx.len() < 2 {
        return Err(DspError::InsufficientPeaks(idx.len()));
    }
    let span = (idx[idx.len() - 1] - idx[0]) as f64 / p.fs();
    Ok(60.0 * (idx.len() - 1) as f64 / span)
}

fn check_rr_window(z: &SignalWindow) -> Result<(), DspError> {
    let want = (RR_WINDOW_S * z.fs()).round() as usize;
    if z.len() != want {
        return Err(DspError::Parameter(format!(
            "respiratory window must hold {RR_WINDOW_S} s ({want} samples), got {}",
            z.len()
        )));
    }
    Ok(())
}

fn decimate_for_rr(z: &SignalWindow) -> Result<SignalWindow, DspError> {
    let factor = (z.fs() / RR_DECIMATED_FS).round().max(1.0) as usize;
    let mut d = block_decimate(z, factor)?.into_samples();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    SignalWindow::new(z.fs() / factor as f64, d)
}

/// Breaths per minute from a 30 s vertical-axis window.
///
/// The window is block-averaged down to ~15 Hz, de-meaned, Hann-windowed and
/// transformed. The strongest bin in (0.05, 0.78] Hz is refined by fitting a
/// parabola through the log power of it and its two neighbours.
pub fn respiratory_rate(z: &SignalWindow) -> Result<f64, DspError> {
    check_rr_window(z)?;
    let d = decimate_for_rr(z)?;
    let n = d.len();
    let nf = n as f64;
    let windowed: Vec<f64> = d
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| v * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / nf).cos()))
        .collect();
    let spec = real_dft(&windowed);
    let power: Vec<f64> = spec.iter().map(Complex64::norm_sqr).collect();

    let bin_hz = d.fs() / nf;
    let k_lo = (RR_BAND.0 / bin_hz).floor() as usize + 1;
    let k_hi = ((RR_BAND.1 / bin_hz).floor() as usize).min(n / 2);
    let (k, pk) =
        (k_lo..=k_hi)
            .map(|k| (k, power[k]))
            .fold((k_lo, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    let total: f64 = d.samples().iter().map(|v| v * v).sum();
    if !(pk > 0.0) || pk <= 1e-20 * total.max(f64::MIN_POSITIVE) {
        return Err(DspError::NoBreath);
    }
    let (y0, y1, y2) = (power[k - 1], pk, power[k + 1]);
    let delta = if y0 > 0.0 && y2 > 0.0 {
        let (l0, l1, l2) = (y0.ln(), y1.ln(), y2.ln());
        let denom = l0 - 2.0 * l1 + l2;
        if denom < 0.0 {
            (0.5 * (l0 - l2) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(60.0 * (k as f64 + delta) * bin_hz)
}

/// Respiratory rate by running the peak detector on the decimated,
/// smoothed z-axis instead of the spectral estimate. This is the
/// memory-lean path used on the microcontroller.
pub fn respiratory_rate_by_peaks(z: &SignalWindow) -> Result<f64, DspError> {
    check_rr_window(z)?;
    let d = decimate_for_rr(z)?;
    // ~0.5 s moving average suppresses what the block average let through
    let win = ((0.5 * d.fs()).round() as usize).clamp(1, d.len());
    let filtered = smooth(&d, win)?;
    let detector = PeakDetector {
        refine_s: 0.5,
        // 46.8 breaths/min upper bound
        refractory_s: 60.0 / super::RR_RANGE.1,
        min_rel_height: 0.5,
    };
    let peaks = detector.detect(&filtered);
    heart_rate(&peaks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PttAggregate {
    #[default]
    Median,
    Mean,
}

/// ACC1→ACC2 delay in milliseconds, as the median over matched beats.
pub fn pulse_transit_time(p1: &PeakList, p2: &PeakList) -> Result<f64, DspError> {
    pulse_transit_time_with(p1, p2, PttAggregate::Median)
}

/// Matches each ACC1 peak to the first ACC2 peak at or after it and no more
/// than [`PTT_GATE_S`] later, then aggregates the matched delays.
pub fn pulse_transit_time_with(p1: &PeakList, p2: &PeakList, agg: PttAggregate) -> Result<f64, DspError> {
    if p1.fs() != p2.fs() {
        return Err(DspError::Dimension(format!("sample rates {} and {}", p1.fs(), p2.fs())));
    }
    if p1.is_empty() || p2.is_empty() {
        return Err(DspError::NoMatch);
    }
    let gate = (PTT_GATE_S * p1.fs()).round() as usize;
    let b = p2.indices();
    let mut j = 0;
    let mut delays: Vec<usize> = Vec::new();
    for &a in p1.indices() {
        while j < b.len() && b[j] < a {
            j += 1;
        }
        if j == b.len() {
            break;
        }
        if b[j] - a <= gate {
            delays.push(b[j] - a);
        }
    }
    if delays.is_empty() {
        return Err(DspError::NoMatch);
    }
    let samples = match agg {
        PttAggregate::Median => {
            delays.sort_unstable();
            let m = delays.len() / 2;
            if delays.len() % 2 == 1 {
                delays[m] as f64
            } else {
                (delays[m - 1] + delays[m]) as f64 / 2.0
            }
        }
        PttAggregate::Mean => delays.iter().sum::<usize>() as f64 / delays.len() as f64,
    };
    Ok(samples * 1000.0 / p1.fs())
}

/// Heart-rate estimate for a window starting at `window_start` seconds.
pub fn heart_rate_estimate(p: &PeakList, window_start: f64) -> Result<VitalEstimate, DspError> {
    VitalEstimate::new(VitalKind::HeartRate, heart_rate(p)?, window_start)
}
