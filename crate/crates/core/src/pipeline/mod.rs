//! Streaming orchestration: DSP duty cycle, vital reports, windowed
//! inference and the k-consecutive consensus alarm.

mod events;
mod runner;
mod source;

pub use events::{Event, EventBody, EventLog};
pub use runner::{run_reports, run_stream, RunnerConfig, StreamRunner};
pub use source::{chunks_from_items, extract_items, items_from_chunks, StreamItem, SyntheticSource};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quant::{QuantError, QuantModel};
use crate::tcn::{TcnError, TcnModel, VitalSeries};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Data(#[from] crate::datastore::DataError),
    #[error(transparent)]
    Siggen(#[from] crate::siggen::SiggenError),
    #[error("event log line {line}: {msg}")]
    Log { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Channel order of the vital vector: HR, SBP, RR, temperature.
pub type VitalVector = [f64; 4];

pub const NOMINAL_VITALS: VitalVector = [75.0, 120.0, 15.0, 37.0];

/// Decision threshold on the sigmoid output.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const STRIDE_CHOICES_MIN: [u32; 3] = [10, 30, 60];

/// Task periods, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub hr_bp_period_s: f64,
    pub rr_period_s: f64,
    pub report_period_s: f64,
    pub nn_stride_s: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { hr_bp_period_s: 2.0, rr_period_s: 30.0, report_period_s: 30.0, nn_stride_s: 1800.0 }
    }
}

impl Schedule {
    pub fn with_stride_min(stride_min: f64) -> Result<Self, PipelineError> {
        let s = Self { nn_stride_s: stride_min * 60.0, ..Self::default() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("hr_bp_period_s", self.hr_bp_period_s),
            ("rr_period_s", self.rr_period_s),
            ("report_period_s", self.report_period_s),
            ("nn_stride_s", self.nn_stride_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.nn_stride_s < self.report_period_s {
            return Err(PipelineError::Parameter("stride shorter than the vitals report period".into()));
        }
        let r = self.nn_stride_s / self.report_period_s;
        if (r - r.round()).abs() > 1e-9 {
            return Err(PipelineError::Parameter("stride must be a whole number of report periods".into()));
        }
        Ok(())
    }

    /// Reports between inferences.
    pub fn stride_reports(&self) -> usize {
        (self.nn_stride_s / self.report_period_s).round() as usize
    }

    /// Number of inferences a stream of `duration_s` gets once the buffer
    /// of `input_len` reports has filled.
    pub fn expected_inferences(&self, duration_s: f64, input_len: usize) -> usize {
        let reports = (duration_s / self.report_period_s + 1e-9).floor() as usize;
        if reports < input_len {
            return 0;
        }
        (reports - input_len) / self.stride_reports() + 1
    }
}

/// Run-length state of the k-consecutive alarm. The alarm latches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    k: u32,
    run_length: u32,
    alarmed: bool,
    alarm_time: Option<f64>,
}

impl ConsensusState {
    pub fn new(k: u32) -> Result<Self, PipelineError> {
        if k == 0 {
            return Err(PipelineError::Parameter("k must be at least 1".into()));
        }
        Ok(Self { k, run_length: 0, alarmed: false, alarm_time: None })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn run_length(&self) -> u32 {
        self.run_length
    }

    pub fn alarmed(&self) -> bool {
        self.alarmed
    }

    pub fn alarm_time(&self) -> Option<f64> {
        self.alarm_time
    }

    /// Feeds one window decision made at time `t`. Returns true when this
    /// window raised the alarm.
    pub fn step(&mut self, positive: bool, t: f64) -> bool {
        if self.alarmed {
            return false;
        }
        if !positive {
            self.run_length = 0;
            return false;
        }
        self.run_length += 1;
        if self.run_length == self.k {
            self.alarmed = true;
            self.alarm_time = Some(t);
            return true;
        }
        false
    }
}

/// Alarm time for a decision sequence at times `t0 + i * stride`.
pub fn alarm_time_of(k: u32, decisions: &[bool], t0: f64, stride: f64) -> Result<Option<f64>, PipelineError> {
    let mut st = ConsensusState::new(k)?;
    for (i, &d) in decisions.iter().enumerate() {
        st.step(d, t0 + i as f64 * stride);
    }
    Ok(st.alarm_time())
}

/// Appends a report to the model buffer.
pub fn push_vitals(buf: &mut VitalSeries, v: &[f64]) -> Result<(), PipelineError> {
    buf.push(v)?;
    Ok(())
}

/// Anything that maps a full vital window to a probability.
pub trait Classifier {
    fn n_channels(&self) -> usize;
    fn input_len(&self) -> usize;
    fn probability(&self, window: &[Vec<f32>]) -> Result<f64, PipelineError>;
}

impl Classifier for TcnModel {
    fn n_channels(&self) -> usize {
        self.n_heads()
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn probability(&self, window: &[Vec<f32>]) -> Result<f64, PipelineError> {
        Ok(self.forward_channels(window)?)
    }
}

impl Classifier for QuantModel {
    fn n_channels(&self) -> usize {
        self.heads.len()
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn probability(&self, window: &[Vec<f32>]) -> Result<f64, PipelineError> {
        Ok(self.qforward_channels(window)?)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn n_channels(&self) -> usize {
        (**self).n_channels()
    }

    fn input_len(&self) -> usize {
        (**self).input_len()
    }

    fn probability(&self, window: &[Vec<f32>]) -> Result<f64, PipelineError> {
        (**self).probability(window)
    }
}
