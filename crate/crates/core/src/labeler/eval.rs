use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelError, LabelSet};
use crate::pipeline::EventLog;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// What happened to one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub patient_id: String,
    pub positive: bool,
    pub onset_hour: Option<f64>,
    pub alarm_hour: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Median of onset minus alarm over true positives; positive when the
    /// alarm came first.
    pub median_time_to_sepsis_h: Option<f64>,
    /// Percentile bootstrap 95% interval of the median.
    pub ci95_h: Option<(f64, f64)>,
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Sensitivity, specificity and time-to-sepsis of alarm outcomes.
pub fn evaluate(outcomes: &[Outcome], seed: u64) -> Result<Metrics, LabelError> {
    let (mut tp, mut fneg, mut tn, mut fp) = (0, 0, 0, 0);
    let mut lead = Vec::new();
    for o in outcomes {
        match (o.positive, o.alarm_hour) {
            (true, Some(a)) => {
                tp += 1;
                let onset = o.onset_hour.ok_or_else(|| LabelError::Episode {
                    patient_id: o.patient_id.clone(),
                    msg: "positive without onset".into(),
                })?;
                lead.push(onset - a);
            }
            (true, None) => fneg += 1,
            (false, None) => tn += 1,
            (false, Some(_)) => fp += 1,
        }
    }
    let (pos, neg) = (tp + fneg, tn + fp);
    if pos == 0 {
        return Err(LabelError::Undefined("no positive patients".into()));
    }
    if neg == 0 {
        return Err(LabelError::Undefined("no negative patients".into()));
    }
    lead.sort_by(f64::total_cmp);
    let (med, ci) = if lead.is_empty() {
        (None, None)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut meds = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
        let mut draw = vec![0.0; lead.len()];
        for _ in 0..BOOTSTRAP_RESAMPLES {
            for d in draw.iter_mut() {
                *d = lead[rng.random_range(0..lead.len())];
            }
            draw.sort_by(f64::total_cmp);
            meds.push(median(&draw));
        }
        meds.sort_by(f64::total_cmp);
        (Some(median(&lead)), Some((quantile(&meds, 0.025), quantile(&meds, 0.975))))
    };
    Ok(Metrics {
        positives: pos,
        negatives: neg,
        true_positives: tp,
        false_negatives: fneg,
        true_negatives: tn,
        false_positives: fp,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
        median_time_to_sepsis_h: med,
        ci95_h: ci,
    })
}

/// Joins labels of included patients with their event logs (keyed by
/// patient id; alarm times in seconds from admission).
pub fn evaluate_logs(labels: &LabelSet, logs: &BTreeMap<String, EventLog>, seed: u64) -> Result<Metrics, LabelError> {
    let mut outcomes = Vec::new();
    for r in labels.records.iter().filter(|r| r.included) {
        let log = logs
            .get(&r.patient_id)
            .ok_or_else(|| LabelError::Episode { patient_id: r.patient_id.clone(), msg: "no event log".into() })?;
        outcomes.push(Outcome {
            patient_id: r.patient_id.clone(),
            positive: r.label.positive,
            onset_hour: r.label.onset_hour,
            alarm_hour: log.alarm_time().map(|t| t / 3600.0),
        });
    }
    evaluate(&outcomes, seed)
}
