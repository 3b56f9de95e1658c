//! Sepsis onset labels for hourly ICU episodes, cohort inclusion rules, and
//! alarm evaluation.

mod cohort;
mod eval;

pub use cohort::{balance, episode_reports, synthetic_cohort, CohortConfig};
pub use eval::{evaluate, evaluate_logs, median, Metrics, Outcome};

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::VitalVector;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("episode {patient_id}: {msg}")]
    Episode { patient_id: String, msg: String },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One ICU stay on an hourly grid; hour `h` is `[h, h+1)` from admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEpisode {
    pub patient_id: String,
    pub age: f64,
    pub los_hours: f64,
    pub sofa: Vec<f64>,
    pub antibiotic_times: Vec<f64>,
    /// HR, SBP, RR, temperature per hour.
    pub vitals: Vec<VitalVector>,
}

impl PatientEpisode {
    pub fn validate(&self) -> Result<(), LabelError> {
        let bad = |msg: String| Err(LabelError::Episode { patient_id: self.patient_id.clone(), msg });
        if !(self.los_hours > 0.0) {
            return bad(format!("length of stay {}", self.los_hours));
        }
        if self.sofa.len() != self.los_hours.ceil() as usize {
            return bad(format!("{} SOFA values for a {} h stay", self.sofa.len(), self.los_hours));
        }
        if let Some(h) = self.sofa.iter().position(|v| !v.is_finite()) {
            return bad(format!("SOFA missing at hour {h}"));
        }
        if self.vitals.len() != self.sofa.len() {
            return bad(format!("{} vital rows for {} hours", self.vitals.len(), self.sofa.len()));
        }
        if let Some(t) = self.antibiotic_times.iter().find(|&&t| !(0.0..self.los_hours).contains(&t)) {
            return bad(format!("antibiotic time {t} outside the stay"));
        }
        Ok(())
    }
}

/// Suspicion-of-infection window around an antibiotic start, in hours.
pub fn suspicion_window(abx_time: f64) -> (f64, f64) {
    ((abx_time - 48.0).max(0.0), abx_time + 24.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnsetRule {
    /// `sofa[h] - sofa[h-1] >= 2`.
    #[default]
    HourOverHour,
    /// `sofa[h] - sofa[window start] >= 2`.
    WindowBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub rule: OnsetRule,
    /// Model window, hours.
    pub window_h: f64,
    /// Window stride, hours.
    pub stride_h: f64,
    /// Stays are cut here before windowing (training split).
    pub cap_h: Option<f64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { rule: OnsetRule::HourOverHour, window_h: 4.0, stride_h: 0.5, cap_h: None }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.window_h > 0.0 && self.stride_h > 0.0) {
            return Err(LabelError::Parameter("window and stride must be positive".into()));
        }
        if self.cap_h.is_some_and(|c| !(c > 0.0)) {
            return Err(LabelError::Parameter("cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetLabel {
    pub positive: bool,
    pub onset_hour: Option<f64>,
    /// One label per window ending at `window_h + i * stride_h`.
    pub window_labels: Vec<u8>,
}

pub const SOFA_JUMP: f64 = 2.0;

/// Earliest hour inside a suspicion window where SOFA rose by 2 or more.
pub fn onset_hour(ep: &PatientEpisode, rule: OnsetRule) -> Result<Option<f64>, LabelError> {
    ep.validate()?;
    let n = ep.sofa.len();
    let mut best: Option<usize> = None;
    for &abx in &ep.antibiotic_times {
        let (lo, hi) = suspicion_window(abx);
        let first = lo.ceil().max(1.0) as usize;
        let last = (hi.floor() as usize).min(n.saturating_sub(1));
        let base = lo.ceil() as usize;
        for h in first..=last {
            let d = match rule {
                OnsetRule::HourOverHour => ep.sofa[h] - ep.sofa[h - 1],
                OnsetRule::WindowBaseline if h > base => ep.sofa[h] - ep.sofa[base],
                OnsetRule::WindowBaseline => continue,
            };
            if d >= SOFA_JUMP {
                best = Some(best.map_or(h, |b| b.min(h)));
                break;
            }
        }
    }
    Ok(best.map(|h| h as f64))
}

pub fn label_onset(ep: &PatientEpisode, cfg: &LabelConfig) -> Result<OnsetLabel, LabelError> {
    cfg.validate()?;
    let onset = onset_hour(ep, cfg.rule)?;
    let span = cfg.cap_h.map_or(ep.los_hours, |c| ep.los_hours.min(c));
    let n =
        if span + 1e-9 < cfg.window_h { 0 } else { ((span - cfg.window_h) / cfg.stride_h + 1e-9).floor() as usize + 1 };
    Ok(OnsetLabel { positive: onset.is_some(), onset_hour: onset, window_labels: vec![onset.is_some() as u8; n] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exclusion {
    #[serde(rename = "los<24h")]
    ShortStay,
    #[serde(rename = "age")]
    Minor,
    #[serde(rename = "early-antibiotics")]
    EarlyAntibiotics,
    #[serde(rename = "onset<4h")]
    EarlyOnset,
}

impl Exclusion {
    pub fn name(self) -> &'static str {
        match self {
            Self::ShortStay => "los<24h",
            Self::Minor => "age",
            Self::EarlyAntibiotics => "early-antibiotics",
            Self::EarlyOnset => "onset<4h",
        }
    }
}

pub const MIN_STAY_H: f64 = 24.0;
pub const MIN_AGE: f64 = 18.0;
pub const EARLY_ANTIBIOTICS_H: f64 = 7.0;
pub const MIN_ONSET_H: f64 = 4.0;
pub const TRAINING_CAP_H: f64 = 48.0;

/// The first inclusion rule the episode fails, checked in a fixed order.
pub fn include(ep: &PatientEpisode, label: &OnsetLabel) -> Option<Exclusion> {
    if ep.los_hours < MIN_STAY_H {
        return Some(Exclusion::ShortStay);
    }
    if ep.age < MIN_AGE {
        return Some(Exclusion::Minor);
    }
    if ep.antibiotic_times.iter().any(|&t| t < EARLY_ANTIBIOTICS_H) {
        return Some(Exclusion::EarlyAntibiotics);
    }
    if label.onset_hour.is_some_and(|h| h < MIN_ONSET_H) {
        return Some(Exclusion::EarlyOnset);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub patient_id: String,
    pub included: bool,
    pub exclusion: Option<Exclusion>,
    pub los_hours: f64,
    #[serde(flatten)]
    pub label: OnsetLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub patient_id: String,
    pub reason: String,
}

/// Output of the labeler: records sorted by patient id, plus episodes that
/// could not be labeled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelSet {
    pub records: Vec<LabelRecord>,
    pub rejected: Vec<Rejection>,
}

impl LabelSet {
    pub fn get(&self, patient_id: &str) -> Option<&LabelRecord> {
        self.records.iter().find(|r| r.patient_id == patient_id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("label set serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, LabelError> {
        serde_json::from_str(s).map_err(|e| LabelError::Parameter(format!("labels: {e}")))
    }
}

pub fn label_cohort(
    episodes: &[PatientEpisode],
    rejected: Vec<Rejection>,
    cfg: &LabelConfig,
) -> Result<LabelSet, LabelError> {
    cfg.validate()?;
    let mut out = LabelSet { records: Vec::new(), rejected };
    for ep in episodes {
        match label_onset(ep, cfg) {
            Ok(label) => {
                let exclusion = include(ep, &label);
                out.records.push(LabelRecord {
                    patient_id: ep.patient_id.clone(),
                    included: exclusion.is_none(),
                    exclusion,
                    los_hours: ep.los_hours,
                    label,
                });
            }
            Err(e) => out.rejected.push(Rejection { patient_id: ep.patient_id.clone(), reason: e.to_string() }),
        }
    }
    out.records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    out.rejected.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct Row {
    patient_id: String,
    age: f64,
    hour: usize,
    sofa: Option<f64>,
    hr: f64,
    rr: f64,
    sbp: f64,
    temp: f64,
    abx_flag: u8,
}

pub const CSV_HEADER: &str = "patient_id,age,hour,sofa,hr,rr,sbp,temp,abx_flag";

/// Reads `patient_id,age,hour,sofa,hr,rr,sbp,temp,abx_flag` rows. Episodes
/// with missing hours, empty SOFA cells or inconsistent ages are returned as
/// rejections; malformed rows are an error.
pub fn read_episodes_csv(r: impl Read) -> Result<(Vec<PatientEpisode>, Vec<Rejection>), LabelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut by_id: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| LabelError::Csv { line: i + 2, msg: e.to_string() })?;
        if row.abx_flag > 1 {
            return Err(LabelError::Csv { line: i + 2, msg: format!("abx_flag {}", row.abx_flag) });
        }
        by_id.entry(row.patient_id.clone()).or_default().push(row);
    }
    let mut episodes = Vec::new();
    let mut rejected = Vec::new();
    for (id, mut rows) in by_id {
        rows.sort_by_key(|r| r.hour);
        let reject = |reason: String| Rejection { patient_id: id.clone(), reason };
        if let Some(h) = rows.iter().enumerate().find(|(i, r)| r.hour != *i).map(|(i, _)| i) {
            rejected.push(reject(format!("SOFA gap: hour {h} missing")));
            continue;
        }
        if let Some(r) = rows.iter().find(|r| r.sofa.is_none()) {
            rejected.push(reject(format!("SOFA gap: no score at hour {}", r.hour)));
            continue;
        }
        if rows.iter().any(|r| r.age != rows[0].age) {
            rejected.push(reject("age changes within the stay".into()));
            continue;
        }
        let ep = PatientEpisode {
            patient_id: id.clone(),
            age: rows[0].age,
            los_hours: rows.len() as f64,
            sofa: rows.iter().map(|r| r.sofa.unwrap_or(f64::NAN)).collect(),
            antibiotic_times: rows.iter().filter(|r| r.abx_flag == 1).map(|r| r.hour as f64).collect(),
            vitals: rows.iter().map(|r| [r.hr, r.sbp, r.rr, r.temp]).collect(),
        };
        episodes.push(ep);
    }
    Ok((episodes, rejected))
}

pub fn write_episodes_csv(episodes: &[PatientEpisode], w: impl std::io::Write) -> Result<(), LabelError> {
    let mut wr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| LabelError::Csv { line: 0, msg: e.to_string() };
    wr.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for ep in episodes {
        for (h, (s, v)) in ep.sofa.iter().zip(&ep.vitals).enumerate() {
            let abx = ep.antibiotic_times.iter().any(|&t| t.floor() as usize == h);
            wr.write_record([
                ep.patient_id.clone(),
                ep.age.to_string(),
                h.to_string(),
                s.to_string(),
                v[0].to_string(),
                v[2].to_string(),
                v[1].to_string(),
                v[3].to_string(),
                (abx as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}
