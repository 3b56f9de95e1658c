use serde::{Deserialize, Serialize};

use super::{
    Classifier, ConsensusState, EventBody, EventLog, PipelineError, Schedule, StreamItem, VitalVector,
    DEFAULT_THRESHOLD, NOMINAL_VITALS,
};
use crate::bp_calib::BpModel;
use crate::dsp::extract::{AccFrame, ExtractorConfig, VitalExtractor};
use crate::dsp::VitalKind;
use crate::tcn::VitalSeries;

const CHANNEL_NAMES: [&str; 4] = ["hr", "sbp", "rr", "temp"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub schedule: Schedule,
    pub k: u32,
    pub threshold: f64,
    pub fs: f64,
    pub bp: BpModel,
    /// Log every per-window vital, not just the reports.
    pub log_vitals: bool,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            k: 8,
            threshold: DEFAULT_THRESHOLD,
            fs: crate::siggen::DEFAULT_FS,
            bp: BpModel::default(),
            log_vitals: true,
        }
    }
}

impl RunnerConfig {
    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            fs: self.fs,
            hr_window_s: self.schedule.hr_bp_period_s,
            rr_window_s: self.schedule.rr_period_s,
            ..ExtractorConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Accum {
    sum: [f64; 3],
    n: [u32; 3],
}

impl Accum {
    fn add(&mut self, ch: usize, v: f64) {
        self.sum[ch] += v;
        self.n[ch] += 1;
    }

    fn mean(&self, ch: usize) -> Option<f64> {
        (self.n[ch] > 0).then(|| self.sum[ch] / self.n[ch] as f64)
    }
}

/// Owns the state of one patient stream.
#[derive(Debug)]
pub struct StreamRunner<C> {
    cfg: RunnerConfig,
    classifier: C,
    extractor: VitalExtractor,
    series: VitalSeries,
    consensus: ConsensusState,
    log: EventLog,
    acc: Accum,
    last: Option<VitalVector>,
    temp: Option<f64>,
    report_len: u64,
    report_end: u64,
    next_index: u64,
    since_full: usize,
}

impl<C: Classifier> StreamRunner<C> {
    pub fn new(cfg: RunnerConfig, classifier: C) -> Result<Self, PipelineError> {
        cfg.schedule.validate()?;
        if !(cfg.fs > 0.0 && cfg.fs.is_finite()) {
            return Err(PipelineError::Parameter(format!("sample rate {}", cfg.fs)));
        }
        if !(0.0..=1.0).contains(&cfg.threshold) {
            return Err(PipelineError::Parameter(format!("threshold {} outside [0, 1]", cfg.threshold)));
        }
        if classifier.n_channels() != NOMINAL_VITALS.len() {
            return Err(PipelineError::Parameter(format!(
                "model takes {} channels, the stream provides {}",
                classifier.n_channels(),
                NOMINAL_VITALS.len()
            )));
        }
        let report_len = (cfg.schedule.report_period_s * cfg.fs).round() as u64;
        if report_len == 0 {
            return Err(PipelineError::Parameter("report period shorter than one sample".into()));
        }
        Ok(Self {
            extractor: VitalExtractor::new(cfg.extractor(), Some(cfg.bp))?,
            series: VitalSeries::new(NOMINAL_VITALS.len(), classifier.input_len()),
            consensus: ConsensusState::new(cfg.k)?,
            log: EventLog::default(),
            acc: Accum::default(),
            last: None,
            temp: None,
            report_len,
            report_end: report_len,
            next_index: 0,
            since_full: 0,
            cfg,
            classifier,
        })
    }

    pub fn consensus(&self) -> &ConsensusState {
        &self.consensus
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn feed(&mut self, item: StreamItem) -> Result<(), PipelineError> {
        match item {
            StreamItem::Temperature { t_s, celsius } => {
                if !celsius.is_finite() {
                    return Err(PipelineError::Parameter(format!("temperature {celsius} at {t_s} s")));
                }
                self.temp = Some(celsius);
                self.log.push(t_s, EventBody::Temperature { celsius });
                Ok(())
            }
            StreamItem::Frames { start_index, frames } => {
                for (i, f) in frames.into_iter().enumerate() {
                    self.frame(start_index + i as u64, f)?;
                }
                Ok(())
            }
        }
    }

    fn frame(&mut self, idx: u64, f: AccFrame) -> Result<(), PipelineError> {
        let fs = self.cfg.fs;
        if idx < self.next_index {
            return Err(PipelineError::Parameter(format!("frame {idx} arrived after frame {}", self.next_index - 1)));
        }
        if idx > self.next_index {
            self.log.push(idx as f64 / fs, EventBody::Gap { expected: self.next_index, got: idx });
            while self.report_end <= idx {
                self.close_report()?;
            }
        }
        self.next_index = idx + 1;
        let t = (idx + 1) as f64 / fs;
        for r in self.extractor.push(idx as usize, f) {
            for e in r.estimates {
                let ch = match e.kind {
                    VitalKind::HeartRate => Some(0),
                    VitalKind::SystolicBp => Some(1),
                    VitalKind::RespiratoryRate => Some(2),
                    VitalKind::PulseTransitTime => None,
                };
                if let Some(ch) = ch {
                    self.acc.add(ch, e.value);
                }
                if self.cfg.log_vitals {
                    self.log.push(t, EventBody::Vital { kind: e.kind, value: e.value });
                }
            }
        }
        if idx + 1 == self.report_end {
            self.close_report()?;
        }
        Ok(())
    }

    fn close_report(&mut self) -> Result<(), PipelineError> {
        let t = self.report_end as f64 / self.cfg.fs;
        let prev = self.last.unwrap_or(NOMINAL_VITALS);
        let mut v = prev;
        let mut held = Vec::new();
        for ch in 0..3 {
            match self.acc.mean(ch) {
                Some(m) => v[ch] = m,
                None => held.push(CHANNEL_NAMES[ch].to_string()),
            }
        }
        match self.temp {
            Some(c) => v[3] = c,
            None => held.push(CHANNEL_NAMES[3].to_string()),
        }
        self.acc = Accum::default();
        self.report_end += self.report_len;
        self.push_report(t, v, held)
    }

    /// Hands a vital vector to the model buffer and runs inference when due.
    pub fn push_report(&mut self, t: f64, v: VitalVector, held: Vec<String>) -> Result<(), PipelineError> {
        super::push_vitals(&mut self.series, &v)?;
        self.last = Some(v);
        self.log.push(t, EventBody::Report { hr: v[0], sbp: v[1], rr: v[2], temp: v[3], held });
        if !self.series.is_full() {
            return Ok(());
        }
        let due = self.since_full % self.cfg.schedule.stride_reports() == 0;
        self.since_full += 1;
        if due {
            let p = self.classifier.probability(&self.series.window()?)?;
            let positive = p >= self.cfg.threshold;
            let raised = self.consensus.step(positive, t);
            self.log.push(t, EventBody::Prediction { p, positive, run_length: self.consensus.run_length() });
            if raised {
                self.log.push(t, EventBody::Alarm { k: self.consensus.k() });
            }
        }
        Ok(())
    }
}

/// Runs a whole accelerometer stream.
pub fn run_stream<C: Classifier>(
    cfg: RunnerConfig,
    classifier: C,
    items: impl IntoIterator<Item = StreamItem>,
) -> Result<EventLog, PipelineError> {
    let mut r = StreamRunner::new(cfg, classifier)?;
    for it in items {
        r.feed(it)?;
    }
    Ok(r.into_log())
}

/// Runs already-averaged reports, one per report period, through the
/// buffer, model and consensus.
pub fn run_reports<C: Classifier>(
    cfg: RunnerConfig,
    classifier: C,
    reports: impl IntoIterator<Item = (f64, VitalVector)>,
) -> Result<EventLog, PipelineError> {
    let mut r = StreamRunner::new(cfg, classifier)?;
    for (t, v) in reports {
        r.push_report(t, v, Vec::new())?;
    }
    Ok(r.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Probability read off the latest HR sample.
    struct LastHr(usize);

    impl Classifier for LastHr {
        fn n_channels(&self) -> usize {
            4
        }

        fn input_len(&self) -> usize {
            self.0
        }

        fn probability(&self, w: &[Vec<f32>]) -> Result<f64, PipelineError> {
            Ok(if *w[0].last().unwrap() > 100.0 { 0.9 } else { 0.1 })
        }
    }

    fn cfg(stride_min: f64, k: u32) -> RunnerConfig {
        RunnerConfig { schedule: Schedule::with_stride_min(stride_min).unwrap(), k, ..RunnerConfig::default() }
    }

    #[test]
    fn inference_cadence() {
        let reports = (1..=720).map(|i| (i as f64 * 30.0, NOMINAL_VITALS));
        let log = run_reports(cfg(30.0, 8), LastHr(480), reports).unwrap();
        let times: Vec<f64> = log.predictions().iter().map(|p| p.0).collect();
        assert_eq!(times, vec![14400.0, 16200.0, 18000.0, 19800.0, 21600.0]);
        assert_eq!(times.len(), Schedule::default().expected_inferences(21600.0, 480));
    }

    #[test]
    fn alarm_after_k_minus_one_strides() {
        let reports = (1..=2000).map(|i| {
            let t = i as f64 * 30.0;
            let mut v = NOMINAL_VITALS;
            if t >= 20_000.0 {
                v[0] = 130.0;
            }
            (t, v)
        });
        let log = run_reports(cfg(10.0, 3), LastHr(480), reports).unwrap();
        let first = log.predictions().iter().find(|p| p.2).unwrap().0;
        assert_eq!(log.alarm_time(), Some(first + 2.0 * 600.0));
        assert_eq!(log.alarms().count(), 1);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        struct Two;
        impl Classifier for Two {
            fn n_channels(&self) -> usize {
                2
            }
            fn input_len(&self) -> usize {
                4
            }
            fn probability(&self, _: &[Vec<f32>]) -> Result<f64, PipelineError> {
                Ok(0.0)
            }
        }
        assert!(StreamRunner::new(RunnerConfig::default(), Two).is_err());
        assert!(run_reports(cfg(30.0, 1), LastHr(4), [(30.0, [f64::NAN, 0.0, 0.0, 0.0])]).is_err());
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut r = StreamRunner::new(RunnerConfig::default(), LastHr(4)).unwrap();
        r.feed(StreamItem::Frames { start_index: 10, frames: vec![AccFrame::default(); 3] }).unwrap();
        assert!(r.feed(StreamItem::Frames { start_index: 5, frames: vec![AccFrame::default()] }).is_err());
    }
}
