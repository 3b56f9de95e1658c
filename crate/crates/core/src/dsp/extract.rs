//! Streaming extraction on the device schedule: heart rate and pulse transit
//! time every 2 s window, respiratory rate every 30 s window.
//!
//! Each site keeps its high-pass state and a short tail of filtered samples
//! across windows, so window edges do not restart the filter or clip the
//! envelope of a beat that straddles them.

use serde::{Deserialize, Serialize};

use super::filter::{bandpass_filter, Cascade};
use super::peaks::PeakDetector;
use super::rates::{heart_rate, pulse_transit_time_with, respiratory_rate, PttAggregate};
use super::{shannon_energy, smooth, PeakList, SignalWindow, VitalEstimate, VitalKind};
use crate::bp_calib::BpModel;

/// High-pass stage ahead of the Shannon energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HighPass {
    Bandpass {
        lo: f64,
        hi: f64,
    },
    /// First difference, as run on the microcontroller.
    Difference,
}

impl Default for HighPass {
    fn default() -> Self {
        Self::Bandpass { lo: 10.0, hi: 40.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub fs: f64,
    pub highpass: HighPass,
    /// Moving-average length applied to the Shannon energy (s).
    pub smooth_s: f64,
    /// Filtered history carried in front of each window (s).
    pub context_s: f64,
    pub hr_window_s: f64,
    pub rr_window_s: f64,
    pub detector: PeakDetector,
    pub ptt_aggregate: PttAggregate,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            fs: 120.0,
            highpass: HighPass::default(),
            smooth_s: 0.1,
            context_s: 0.5,
            hr_window_s: 2.0,
            rr_window_s: super::rates::RR_WINDOW_S,
            detector: PeakDetector::default(),
            ptt_aggregate: PttAggregate::Median,
        }
    }
}

impl ExtractorConfig {
    pub fn hr_window_len(&self) -> usize {
        (self.hr_window_s * self.fs).round() as usize
    }

    pub fn rr_window_len(&self) -> usize {
        (self.rr_window_s * self.fs).round() as usize
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Iir(Cascade),
    Diff { last: f64 },
}

/// Beat tracker for one accelerometer.
#[derive(Debug, Clone)]
pub struct SiteBeatTracker {
    cfg: ExtractorConfig,
    stage: Stage,
    primed: bool,
    history: Vec<f64>,
    /// Absolute index of the next input sample.
    next_index: usize,
    delay: usize,
    last_beat: Option<usize>,
}

impl SiteBeatTracker {
    pub fn new(cfg: ExtractorConfig) -> Result<Self, super::DspError> {
        let (stage, delay) = match cfg.highpass {
            HighPass::Bandpass { lo, hi } => {
                let f = bandpass_filter(cfg.fs, lo, hi)?;
                let gd = f.group_delay(0.5 * (lo + hi), cfg.fs).round().max(0.0) as usize;
                (Stage::Iir(f), gd)
            }
            HighPass::Difference => (Stage::Diff { last: 0.0 }, 0),
        };
        Ok(Self { cfg, stage, primed: false, history: Vec::new(), next_index: 0, delay, last_beat: None })
    }

    /// Samples by which a filtered beat trails the input beat.
    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Forgets all state; the next window is treated as the start of a record
    /// beginning at absolute index `at`.
    pub fn restart(&mut self, at: usize) {
        match &mut self.stage {
            Stage::Iir(f) => f.reset(),
            Stage::Diff { last } => *last = 0.0,
        }
        self.primed = false;
        self.history.clear();
        self.next_index = at;
        self.last_beat = None;
    }

    fn filter(&mut self, x: f64) -> f64 {
        if !self.primed {
            match &mut self.stage {
                Stage::Iir(f) => f.settle(x),
                Stage::Diff { last } => *last = x,
            }
            self.primed = true;
        }
        match &mut self.stage {
            Stage::Iir(f) => f.process(x),
            Stage::Diff { last } => {
                let y = x - *last;
                *last = x;
                y
            }
        }
    }

    /// Feeds one window of lateral and vertical samples and returns the beats
    /// located in it, as absolute sample indices corrected for filter delay.
    pub fn push_window(&mut self, ax: &[f64], ay: &[f64]) -> PeakList {
        let fs = self.cfg.fs;
        let win_start = self.next_index;
        let n = ax.len().min(ay.len());
        let mut ext = std::mem::take(&mut self.history);
        let ext_start = win_start - ext.len();
        for i in 0..n {
            let v = ax[i].hypot(ay[i]);
            let y = self.filter(v);
            ext.push(y);
        }
        self.next_index += n;

        let mut beats = Vec::new();
        if ext.len() >= 4 {
            let env = SignalWindow::new_unchecked(fs, ext.clone());
            let env = shannon_energy(&env);
            let win = ((self.cfg.smooth_s * fs).round() as usize).clamp(1, env.len());
            let env = smooth(&env, win).expect("window clamped to length");
            let win_end = win_start + n;
            for p in self.cfg.detector.detect(&env).indices() {
                let j = ext_start + p;
                // a maximum on the final sample may be a clipped beat; the next
                // window sees it whole
                if j < win_start || j + 1 >= win_end {
                    continue;
                }
                let Some(beat) = j.checked_sub(self.delay) else { continue };
                let refractory = (self.cfg.detector.refractory_s * fs).round() as usize;
                if let Some(last) = self.last_beat {
                    if beat <= last || beat - last < refractory {
                        continue;
                    }
                }
                self.last_beat = Some(beat);
                beats.push(beat);
            }
        }
        let keep = ((self.cfg.context_s * fs).round() as usize).min(ext.len());
        self.history = ext.split_off(ext.len() - keep);
        PeakList::new(fs, beats).expect("beats strictly increase")
    }
}

/// One frame from both sensors: ACC1 (x, y, z), ACC2 (x, y, z), in g.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccFrame {
    pub acc1: [f64; 3],
    pub acc2: [f64; 3],
}

/// Everything produced for one 2 s window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowReport {
    pub window_start: f64,
    pub acc1_peaks: PeakList,
    pub acc2_peaks: PeakList,
    pub estimates: Vec<VitalEstimate>,
}

/// Dual-site extractor driven frame by frame.
#[derive(Debug, Clone)]
pub struct VitalExtractor {
    cfg: ExtractorConfig,
    bp: Option<BpModel>,
    acc1: SiteBeatTracker,
    acc2: SiteBeatTracker,
    pending: Vec<AccFrame>,
    pending_start: usize,
    z: Vec<f64>,
    z_start: usize,
    next_index: usize,
}

impl VitalExtractor {
    pub fn new(cfg: ExtractorConfig, bp: Option<BpModel>) -> Result<Self, super::DspError> {
        Ok(Self {
            acc1: SiteBeatTracker::new(cfg)?,
            acc2: SiteBeatTracker::new(cfg)?,
            cfg,
            bp,
            pending: Vec::new(),
            pending_start: 0,
            z: Vec::new(),
            z_start: 0,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    /// Index of the next expected frame.
    pub fn next_index(&self) -> usize {
        self.next_index
    }

    fn resync(&mut self, at: usize) {
        let hr_n = self.cfg.hr_window_len();
        let rr_n = self.cfg.rr_window_len();
        let next_hr = at.div_ceil(hr_n) * hr_n;
        self.acc1.restart(next_hr);
        self.acc2.restart(next_hr);
        self.pending.clear();
        self.pending_start = next_hr;
        self.z.clear();
        self.z_start = at.div_ceil(rr_n) * rr_n;
        self.next_index = at;
    }

    /// Pushes the frame with absolute index `index`. Frames must arrive in
    /// increasing order; a jump restarts the trackers and discards partial
    /// windows. Returns the reports of windows completed by this frame.
    pub fn push(&mut self, index: usize, frame: AccFrame) -> Vec<WindowReport> {
        if index != self.next_index {
            self.resync(index);
        }
        self.next_index = index + 1;
        let fs = self.cfg.fs;
        let mut out = Vec::new();

        let hr_n = self.cfg.hr_window_len();
        if index >= self.pending_start {
            self.pending.push(frame);
            if self.pending.len() == hr_n {
                out.push(self.finish_hr_window());
            }
        }

        let rr_n = self.cfg.rr_window_len();
        if index >= self.z_start {
            self.z.push(frame.acc1[2]);
            if self.z.len() == rr_n {
                let start = self.z_start as f64 / fs;
                let z = SignalWindow::new(fs, std::mem::take(&mut self.z));
                self.z_start += rr_n;
                if let Some(rr) = z.ok().and_then(|z| respiratory_rate(&z).ok()) {
                    if let Ok(e) = VitalEstimate::new(VitalKind::RespiratoryRate, rr, start) {
                        // attach to the report of the same frame when there is one
                        match out.last_mut() {
                            Some(r) => r.estimates.push(e),
                            None => out.push(WindowReport {
                                window_start: start,
                                acc1_peaks: PeakList::new(fs, vec![]).expect("empty"),
                                acc2_peaks: PeakList::new(fs, vec![]).expect("empty"),
                                estimates: vec![e],
                            }),
                        }
                    }
                }
            }
        }
        out
    }

    fn finish_hr_window(&mut self) -> WindowReport {
        let fs = self.cfg.fs;
        let frames = std::mem::take(&mut self.pending);
        let start = self.pending_start as f64 / fs;
        self.pending_start += frames.len();
        let col = |site: usize, axis: usize| -> Vec<f64> {
            frames.iter().map(|f| if site == 0 { f.acc1[axis] } else { f.acc2[axis] }).collect()
        };
        let p1 = self.acc1.push_window(&col(0, 0), &col(0, 1));
        let p2 = self.acc2.push_window(&col(1, 0), &col(1, 1));

        let mut estimates = Vec::new();
        if let Ok(hr) = heart_rate(&p1) {
            if let Ok(e) = VitalEstimate::new(VitalKind::HeartRate, hr, start) {
                estimates.push(e);
            }
        }
        if let Ok(ptt) = pulse_transit_time_with(&p1, &p2, self.cfg.ptt_aggregate) {
            if let Ok(e) = VitalEstimate::new(VitalKind::PulseTransitTime, ptt, start) {
                estimates.push(e);
                if let Some(model) = &self.bp {
                    if let Ok(sbp) = model.estimate(ptt) {
                        estimates.push(VitalEstimate { kind: VitalKind::SystolicBp, value: sbp, window_start: start });
                    }
                }
            }
        }
        WindowReport { window_start: start, acc1_peaks: p1, acc2_peaks: p2, estimates }
    }
}

/// Runs the extractor over two whole recordings.
pub fn extract_record(
    cfg: ExtractorConfig,
    bp: Option<BpModel>,
    acc1: &crate::siggen::AccStream,
    acc2: &crate::siggen::AccStream,
) -> Result<Vec<WindowReport>, super::DspError> {
    let mut ex = VitalExtractor::new(cfg, bp)?;
    let n = acc1.len().min(acc2.len());
    let mut out = Vec::new();
    for i in 0..n {
        let frame = AccFrame { acc1: [acc1.ax[i], acc1.ay[i], acc1.az[i]], acc2: [acc2.ax[i], acc2.ay[i], acc2.az[i]] };
        out.extend(ex.push(i, frame));
    }
    Ok(out)
}

/// Mean of the estimates of one kind, if any.
pub fn mean_of(reports: &[WindowReport], kind: VitalKind) -> Option<f64> {
    let v: Vec<f64> =
        reports.iter().flat_map(|r| r.estimates.iter()).filter(|e| e.kind == kind).map(|e| e.value).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub const ESTIMATES_CSV_HEADER: &str = "window_start_s,kind,value";

/// Writes every estimate of the reports as `window_start_s,kind,value`.
pub fn write_estimates_csv(reports: &[WindowReport], w: impl std::io::Write) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    wr.write_record(ESTIMATES_CSV_HEADER.split(',')).map_err(io)?;
    for e in reports.iter().flat_map(|r| &r.estimates) {
        wr.write_record([e.window_start.to_string(), e.kind.label().to_string(), e.value.to_string()]).map_err(io)?;
    }
    wr.flush()
}

/// Runs the whole-record heartbeat chain on one sensor: norm, primed
/// high-pass, Shannon energy, smoothing and peak detection, with peaks moved
/// back by the filter delay.
pub fn record_peaks(cfg: ExtractorConfig, ax: &[f64], ay: &[f64]) -> Result<PeakList, super::DspError> {
    let big = ExtractorConfig { context_s: 0.0, ..cfg };
    let mut t = SiteBeatTracker::new(big)?;
    // feed as one window; a trailing dummy sample keeps the last beat eligible
    let mut x = ax.to_vec();
    let mut y = ay.to_vec();
    if let (Some(&lx), Some(&ly)) = (ax.last(), ay.last()) {
        x.push(lx);
        y.push(ly);
    }
    let p = t.push_window(&x, &y);
    PeakList::new(cfg.fs, p.indices().iter().copied().filter(|&i| i < ax.len()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen::{generate_scg, ScgConfig};

    #[test]
    fn noise_free_chain_finds_every_beat() {
        let cfg = ScgConfig { hr_bpm: 60.0, duration: 30.0, ..Default::default() };
        let (a1, _, truth) = generate_scg(&cfg).unwrap();
        let p = record_peaks(ExtractorConfig::default(), &a1.ax, &a1.ay).unwrap();
        // the beat at t=0 is half outside the record
        let want: Vec<f64> = truth.beat_times.iter().copied().filter(|&t| t > 0.0).collect();
        let got: Vec<f64> = p.times().filter(|&t| t > 0.05).collect();
        assert_eq!(got.len(), want.len(), "{got:?}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 2.0 / 120.0, "{g} vs {w}");
        }
    }

    #[test]
    fn count_matches_duration_times_rate() {
        for hr in [45.0, 72.0, 100.0, 150.0, 200.0] {
            let cfg = ScgConfig { hr_bpm: hr, duration: 20.0, ..Default::default() };
            let (a1, _, _) = generate_scg(&cfg).unwrap();
            let p = record_peaks(ExtractorConfig::default(), &a1.ax, &a1.ay).unwrap();
            let expect = (cfg.duration * hr / 60.0).floor() as i64;
            assert!((p.len() as i64 - expect).abs() <= 1, "hr {hr}: {} vs {expect}", p.len());
        }
    }

    #[test]
    fn windowed_hr_tracks_truth() {
        let cfg = ScgConfig { hr_bpm: 72.0, snr_db: 10.0, seed: 4, duration: 120.0, ..Default::default() };
        let (a1, a2, _) = generate_scg(&cfg).unwrap();
        let reports = extract_record(ExtractorConfig::default(), None, &a1, &a2).unwrap();
        let hr = mean_of(&reports, VitalKind::HeartRate).unwrap();
        assert!((hr - 72.0).abs() <= 2.85, "{hr}");
        let rr = mean_of(&reports, VitalKind::RespiratoryRate).unwrap();
        assert!((rr - 15.0).abs() <= 0.77, "{rr}");
        assert_eq!(
            reports.iter().filter(|r| r.estimates.iter().any(|e| e.kind == VitalKind::RespiratoryRate)).count(),
            4
        );
    }

    #[test]
    fn windowed_ptt_tracks_truth() {
        let cfg = ScgConfig { hr_bpm: 72.0, ptt_ms: 40.0, duration: 120.0, ..Default::default() };
        let (a1, a2, _) = generate_scg(&cfg).unwrap();
        let reports = extract_record(ExtractorConfig::default(), None, &a1, &a2).unwrap();
        let ptt = mean_of(&reports, VitalKind::PulseTransitTime).unwrap();
        assert!((ptt - 40.0).abs() <= 1000.0 / 120.0, "{ptt}");
    }

    #[test]
    fn difference_proxy_also_tracks_hr() {
        let cfg = ScgConfig { hr_bpm: 80.0, snr_db: 20.0, seed: 2, duration: 60.0, ..Default::default() };
        let (a1, a2, _) = generate_scg(&cfg).unwrap();
        let ex = ExtractorConfig { highpass: HighPass::Difference, ..Default::default() };
        let reports = extract_record(ex, None, &a1, &a2).unwrap();
        let hr = mean_of(&reports, VitalKind::HeartRate).unwrap();
        assert!((hr - 80.0).abs() <= 2.85, "{hr}");
    }

    #[test]
    fn gap_restarts_on_window_grid() {
        let cfg = ScgConfig { duration: 20.0, ..Default::default() };
        let (a1, a2, _) = generate_scg(&cfg).unwrap();
        let mut ex = VitalExtractor::new(ExtractorConfig::default(), None).unwrap();
        let frame = |i: usize| AccFrame { acc1: [a1.ax[i], a1.ay[i], a1.az[i]], acc2: [a2.ax[i], a2.ay[i], a2.az[i]] };
        let mut starts = Vec::new();
        for i in (0..600).chain(900..2400) {
            for r in ex.push(i, frame(i)) {
                starts.push(r.window_start);
            }
        }
        // windows [4,6) and [6,8) are incomplete; resumes at 8 s
        assert_eq!(starts, vec![0.0, 2.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0]);
    }
}
