//! Vital-sign extraction from chest accelerometers.
//!
//! The heartbeat chain is: Euclidean norm of the lateral and vertical axes,
//! band-pass (or first difference on constrained targets), Shannon energy,
//! centered moving average, and peak picking at the negative-to-positive zero
//! crossings of the envelope's Hilbert transform. Heart rate comes from the
//! peak spacing, pulse transit time from matching peaks of two sensors, and
//! respiratory rate from the dominant spectral line of the decimated z-axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod extract;
pub mod filter;
pub mod hilbert;
pub mod peaks;
pub mod rates;

pub use extract::{ExtractorConfig, HighPass, SiteBeatTracker, VitalExtractor};
pub use filter::{bandpass, block_decimate, first_difference};
pub use hilbert::hilbert_imag;
pub use peaks::{detect_peaks, PeakDetector};
pub use rates::{
    heart_rate, pulse_transit_time, pulse_transit_time_with, respiratory_rate, respiratory_rate_by_peaks, PttAggregate,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("insufficient peaks: need at least 2, found {0}")]
    InsufficientPeaks(usize),
    #[error("no breathing component in the 0.05-0.78 Hz band")]
    NoBreath,
    #[error("no ACC1/ACC2 peak pair within the gating window")]
    NoMatch,
}

/// Uniformly sampled, finite, non-empty real signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalWindow {
    fs: f64,
    samples: Vec<f64>,
}

impl SignalWindow {
    pub fn new(fs: f64, samples: Vec<f64>) -> Result<Self, DspError> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(DspError::InvalidSignal(format!("sample rate must be positive, got {fs}")));
        }
        if samples.is_empty() {
            return Err(DspError::InvalidSignal("empty window".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DspError::InvalidSignal(format!("non-finite sample at index {i}")));
        }
        Ok(Self { fs, samples })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn new_unchecked(fs: f64, samples: Vec<f64>) -> Self {
        debug_assert!(fs > 0.0 && !samples.is_empty());
        Self { fs, samples }
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Strictly increasing sample indices of detected beats.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakList {
    indices: Vec<usize>,
    fs: f64,
}

impl PeakList {
    pub fn new(fs: f64, indices: Vec<usize>) -> Result<Self, DspError> {
        if !(fs > 0.0) {
            return Err(DspError::InvalidSignal(format!("sample rate must be positive, got {fs}")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DspError::InvalidSignal("peak indices must be strictly increasing".into()));
        }
        Ok(Self { indices, fs })
    }

    /// Peaks at the given times (seconds), rounded to the nearest sample.
    pub fn from_times(fs: f64, times: &[f64]) -> Result<Self, DspError> {
        Self::new(fs, times.iter().map(|t| (t * fs).round() as usize).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.indices.iter().map(move |&i| i as f64 / self.fs)
    }

    /// Every index moved by `offset` samples; indices that would become
    /// negative are dropped.
    pub fn shifted(&self, offset: i64) -> Self {
        let indices = self.indices.iter().filter_map(|&i| usize::try_from(i as i64 + offset).ok()).collect();
        Self { indices, fs: self.fs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VitalKind {
    #[serde(rename = "HR_bpm")]
    HeartRate,
    #[serde(rename = "RR_brpm")]
    RespiratoryRate,
    #[serde(rename = "PTT_ms")]
    PulseTransitTime,
    #[serde(rename = "SBP_mmHg")]
    SystolicBp,
}

impl VitalKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::HeartRate => "HR_bpm",
            Self::RespiratoryRate => "RR_brpm",
            Self::PulseTransitTime => "PTT_ms",
            Self::SystolicBp => "SBP_mmHg",
        }
    }
}

pub const HR_RANGE: (f64, f64) = (30.0, 220.0);
pub const RR_RANGE: (f64, f64) = (3.0, 46.8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalEstimate {
    pub kind: VitalKind,
    pub value: f64,
    /// Seconds from the start of the record.
    pub window_start: f64,
}

impl VitalEstimate {
    /// Builds an estimate, rejecting values outside the physiological range
    /// of its kind.
    pub fn new(kind: VitalKind, value: f64, window_start: f64) -> Result<Self, DspError> {
        let ok = value.is_finite()
            && match kind {
                VitalKind::HeartRate => (HR_RANGE.0..=HR_RANGE.1).contains(&value),
                VitalKind::RespiratoryRate => (RR_RANGE.0..=RR_RANGE.1).contains(&value),
                VitalKind::PulseTransitTime => value >= 0.0,
                VitalKind::SystolicBp => true,
            };
        if !ok {
            return Err(DspError::Parameter(format!("{} value {value} out of range", kind.label())));
        }
        Ok(Self { kind, value, window_start })
    }
}

/// Per-sample `sqrt(ax² + ay²)`.
pub fn euclidean_norm(ax: &SignalWindow, ay: &SignalWindow) -> Result<SignalWindow, DspError> {
    if ax.len() != ay.len() {
        return Err(DspError::Dimension(format!("lengths {} and {}", ax.len(), ay.len())));
    }
    if ax.fs() != ay.fs() {
        return Err(DspError::Dimension(format!("sample rates {} and {}", ax.fs(), ay.fs())));
    }
    let out = ax.samples().iter().zip(ay.samples()).map(|(x, y)| x.hypot(*y)).collect();
    Ok(SignalWindow::new_unchecked(ax.fs(), out))
}

/// Shannon energy `-x̂²·ln(x̂²)` of the max-abs normalized window, with
/// `0·ln 0 = 0`. An all-zero window maps to all zeros.
pub fn shannon_energy(x: &SignalWindow) -> SignalWindow {
    let peak = x.samples().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let out = if peak == 0.0 {
        vec![0.0; x.len()]
    } else {
        x.samples()
            .iter()
            .map(|&v| {
                let p = (v / peak).powi(2);
                if p == 0.0 || p == 1.0 {
                    0.0
                } else {
                    (-p * p.ln()).max(0.0)
                }
            })
            .collect()
    };
    SignalWindow::new_unchecked(x.fs(), out)
}

/// Centered moving average over `win_len` samples. Near the edges the window
/// shrinks to the samples that exist, so the length is preserved.
pub fn smooth(x: &SignalWindow, win_len: usize) -> Result<SignalWindow, DspError> {
    let n = x.len();
    if win_len == 0 || win_len > n {
        return Err(DspError::Parameter(format!("smoothing window {win_len} outside 1..={n}")));
    }
    let s = x.samples();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in s {
        acc += v;
        prefix.push(acc);
    }
    let before = (win_len - 1) / 2;
    let after = win_len - 1 - before;
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    Ok(SignalWindow::new_unchecked(x.fs(), out))
}
