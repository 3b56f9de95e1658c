use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dsp::VitalKind;

/// One log line: `{"t": seconds, "type": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Vital {
        kind: VitalKind,
        value: f64,
    },
    Temperature {
        celsius: f64,
    },
    /// Frames `expected..got` never arrived.
    Gap {
        expected: u64,
        got: u64,
    },
    /// The averaged vector handed to the model buffer. `held` names the
    /// channels filled from the previous report.
    Report {
        hr: f64,
        sbp: f64,
        rr: f64,
        temp: f64,
        held: Vec<String>,
    },
    Prediction {
        p: f64,
        positive: bool,
        run_length: u32,
    },
    Alarm {
        k: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, body: EventBody) {
        self.events.push(Event { t, body });
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), PipelineError> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, PipelineError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|e| PipelineError::Log { line: i + 1, msg: e.to_string() })?;
            events.push(e);
        }
        Ok(Self { events })
    }

    pub fn alarms(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| matches!(e.body, EventBody::Alarm { .. }))
    }

    /// Time of the first alarm.
    pub fn alarm_time(&self) -> Option<f64> {
        self.alarms().next().map(|e| e.t)
    }

    /// (time, probability, positive) of every inference.
    pub fn predictions(&self) -> Vec<(f64, f64, bool)> {
        self.events
            .iter()
            .filter_map(|e| match e.body {
                EventBody::Prediction { p, positive, .. } => Some((e.t, p, positive)),
                _ => None,
            })
            .collect()
    }

    pub fn reports(&self) -> Vec<(f64, [f64; 4])> {
        self.events
            .iter()
            .filter_map(|e| match e.body {
                EventBody::Report { hr, sbp, rr, temp, .. } => Some((e.t, [hr, sbp, rr, temp])),
                _ => None,
            })
            .collect()
    }

    pub fn count(&self, pred: impl Fn(&EventBody) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.body)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_shape() {
        let mut log = EventLog::default();
        log.push(1.5, EventBody::Prediction { p: 0.25, positive: false, run_length: 0 });
        log.push(2.0, EventBody::Alarm { k: 8 });
        log.push(2.0, EventBody::Vital { kind: VitalKind::HeartRate, value: 71.0 });
        let text = String::from_utf8(log.to_jsonl()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"t":1.5,"type":"prediction","payload":{"p":0.25,"positive":false,"run_length":0}}"#);
        assert!(text.contains(r#""kind":"HR_bpm""#));
        let back = EventLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.alarm_time(), Some(2.0));
        assert_eq!(back.predictions(), vec![(1.5, 0.25, false)]);
    }

    #[test]
    fn bad_line_is_located() {
        let e = EventLog::read_jsonl("{\"t\":1,\"type\":\"alarm\",\"payload\":{\"k\":1}}\nnot json\n".as_bytes());
        assert!(matches!(e, Err(PipelineError::Log { line: 2, .. })));
    }
}
