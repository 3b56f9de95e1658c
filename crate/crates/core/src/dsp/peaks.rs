//! Peak picking on a smoothed energy envelope via Hilbert zero crossings.

use super::hilbert::hilbert_imag;
use super::{PeakList, SignalWindow};

/// Tuning for [`detect_peaks`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakDetector {
    /// Half-width of the search for the envelope maximum around a crossing.
    pub refine_s: f64,
    /// Minimum spacing between accepted peaks.
    pub refractory_s: f64,
    /// Accepted peaks must rise at least this fraction of the envelope's
    /// min-to-max span above its minimum.
    pub min_rel_height: f64,
}

impl Default for PeakDetector {
    fn default() -> Self {
        Self { refine_s: 0.100, refractory_s: 0.250, min_rel_height: 0.3 }
    }
}

impl PeakDetector {
    /// Candidate indices: negative-to-positive zero crossings of the Hilbert
    /// transform of `env`. The crossing between samples i and i+1 is placed
    /// on whichever of the two is closer to zero. The DFT treats the window
    /// as periodic, so the wrap from the last sample to the first counts too.
    fn crossings(h: &[f64]) -> Vec<usize> {
        let n = h.len();
        let mut out = Vec::new();
        let pick = |a: usize, b: usize| if h[a].abs() <= h[b].abs() { a } else { b };
        if h[n - 1] <= 0.0 && h[0] > 0.0 {
            out.push(0);
        }
        for i in 0..n - 1 {
            if h[i] <= 0.0 && h[i + 1] > 0.0 {
                out.push(pick(i, i + 1));
            }
        }
        out
    }

    pub fn detect(&self, env: &SignalWindow) -> PeakList {
        let fs = env.fs();
        let x = env.samples();
        let n = x.len();
        if n < 4 {
            return PeakList::new(fs, Vec::new()).expect("empty list is valid");
        }
        let h = hilbert_imag(env).expect("length checked");
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi - lo <= 0.0 {
            return PeakList::new(fs, Vec::new()).expect("empty list is valid");
        }
        let floor = lo + self.min_rel_height * (hi - lo);
        let refine = (self.refine_s * fs).round() as usize;
        let refractory = (self.refractory_s * fs).round() as usize;

        let mut candidates: Vec<usize> = Self::crossings(h.samples())
            .into_iter()
            .map(|c| {
                let a = c.saturating_sub(refine);
                let b = (c + refine).min(n - 1);
                // first maximum wins ties
                (a..=b).fold(a, |best, i| if x[i] > x[best] { i } else { best })
            })
            .filter(|&p| x[p] >= floor)
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let mut peaks: Vec<usize> = Vec::with_capacity(candidates.len());
        for p in candidates {
            match peaks.last_mut() {
                Some(last) if p - *last < refractory => {
                    if x[p] > x[*last] {
                        *last = p;
                    }
                }
                _ => peaks.push(p),
            }
        }
        PeakList::new(fs, peaks).expect("peaks are strictly increasing")
    }
}

/// Heartbeat locations on a smoothed Shannon-energy envelope, using the
/// default [`PeakDetector`].
pub fn detect_peaks(env: &SignalWindow) -> PeakList {
    PeakDetector::default().detect(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn raised_cosine_peaks_at_maxima() {
        let fs = 120.0;
        let x: Vec<f64> = (0..360).map(|i| 1.0 + (2.0 * PI * i as f64 / fs).cos()).collect();
        let p = detect_peaks(&SignalWindow::new(fs, x).unwrap());
        assert_eq!(p.len(), 3, "{:?}", p.indices());
        for (got, want) in p.indices().iter().zip([0usize, 120, 240]) {
            assert!((*got as i64 - want as i64).abs() <= 1, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_envelope_has_no_peaks() {
        let p = detect_peaks(&SignalWindow::new(120.0, vec![0.7; 240]).unwrap());
        assert!(p.is_empty());
    }

    #[test]
    fn refractory_keeps_larger_peak() {
        // two bumps 100 ms apart; only the taller survives a 250 ms refractory
        let fs = 120.0;
        let bump = |c: f64, a: f64, t: f64| a * (-(t - c).powi(2) / (2.0 * 0.02f64.powi(2))).exp();
        let x: Vec<f64> = (0..240)
            .map(|i| {
                let t = i as f64 / fs;
                bump(0.5, 1.0, t) + bump(0.6, 0.8, t) + bump(1.5, 1.0, t)
            })
            .collect();
        let p = detect_peaks(&SignalWindow::new(fs, x).unwrap());
        assert_eq!(p.indices(), &[60, 180]);
    }

    #[test]
    fn small_ripples_are_gated() {
        let fs = 120.0;
        let x: Vec<f64> = (0..480)
            .map(|i| {
                let t = i as f64 / fs;
                let beat = (-(((t % 1.0) - 0.5).powi(2)) / (2.0 * 0.03f64.powi(2))).exp();
                beat + 0.05 * (2.0 * PI * 7.0 * t).sin().max(0.0)
            })
            .collect();
        let p = detect_peaks(&SignalWindow::new(fs, x).unwrap());
        assert_eq!(p.indices(), &[60, 180, 300, 420]);
    }
}
