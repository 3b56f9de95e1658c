use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabelError, LabelRecord, PatientEpisode};
use crate::pipeline::{VitalVector, NOMINAL_VITALS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    pub positive_fraction: f64,
    pub min_los_h: usize,
    pub max_los_h: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self { n: 200, positive_fraction: 0.3, min_los_h: 24, max_los_h: 36, seed: 0 }
    }
}

/// Vital change at full deterioration: HR, SBP, RR, temperature.
const DETERIORATION: VitalVector = [35.0, -25.0, 9.0, 1.8];
const RAMP_H: f64 = 8.0;

/// Seeded cohort of adult stays. Positives get an antibiotic start, a SOFA
/// jump of 2 or 3 near it and vitals that deteriorate over the hours before
/// the jump; a share of them deteriorate only partly. Some controls receive
/// antibiotics or show a transient vital excursion. SOFA otherwise moves by
/// at most 1 per hour.
pub fn synthetic_cohort(cfg: &CohortConfig) -> Result<Vec<PatientEpisode>, LabelError> {
    if cfg.min_los_h < 24 || cfg.max_los_h < cfg.min_los_h {
        return Err(LabelError::Parameter("stay range must be at least 24 h and ordered".into()));
    }
    if !(0.0..=1.0).contains(&cfg.positive_fraction) {
        return Err(LabelError::Parameter("positive fraction outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = [
        Normal::new(0.0, 4.0).expect("sd"),
        Normal::new(0.0, 4.0).expect("sd"),
        Normal::new(0.0, 1.0).expect("sd"),
        Normal::new(0.0, 0.15).expect("sd"),
    ];
    let mut out = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let los = rng.random_range(cfg.min_los_h..=cfg.max_los_h);
        let positive = rng.random_bool(cfg.positive_fraction);
        let age = rng.random_range(18..=90) as f64;
        let mut sofa = Vec::with_capacity(los);
        let mut s: i32 = rng.random_range(0..=4);
        let (mut abx, mut onset) = (Vec::new(), None);
        let mut severity = 0.0;
        let mut excursion = None;
        if positive {
            let a = rng.random_range(8..los - 4);
            let o = (a as i32 + rng.random_range(-3..=4)).clamp(6, los as i32 - 1) as usize;
            abx.push(a as f64);
            onset = Some(o);
            severity = if rng.random_bool(0.3) { 0.35 } else { 1.0 };
        } else {
            if rng.random_bool(0.4) {
                abx.push(rng.random_range(7..los) as f64);
            }
            if rng.random_bool(0.15) {
                let start = rng.random_range(0..los) as f64;
                excursion = Some((start, start + rng.random_range(4.0..10.0)));
            }
        }
        for h in 0..los {
            if Some(h) == onset {
                s += rng.random_range(2..=3);
            } else if h > 0 {
                s = (s + rng.random_range(-1..=1)).max(0);
            }
            sofa.push(s as f64);
        }
        let vitals = (0..los)
            .map(|h| {
                let t = h as f64;
                let w = match (onset, excursion) {
                    (Some(o), _) => severity * ((t - (o as f64 - RAMP_H)) / RAMP_H).clamp(0.0, 1.0),
                    (None, Some((a, b))) if t >= a && t < b => 0.8,
                    _ => 0.0,
                };
                let mut v = NOMINAL_VITALS;
                for c in 0..4 {
                    v[c] += w * DETERIORATION[c] + noise[c].sample(&mut rng);
                }
                v
            })
            .collect();
        out.push(PatientEpisode {
            patient_id: format!("S{i:04}"),
            age,
            los_hours: los as f64,
            sofa,
            antibiotic_times: abx,
            vitals,
        });
    }
    Ok(out)
}

/// One report per `report_period_s`, each holding the vitals of its hour.
pub fn episode_reports(ep: &PatientEpisode, report_period_s: f64) -> Vec<(f64, VitalVector)> {
    let per_hour = (3600.0 / report_period_s).round() as usize;
    let mut out = Vec::with_capacity(ep.vitals.len() * per_hour);
    for (h, v) in ep.vitals.iter().enumerate() {
        for i in 0..per_hour {
            out.push(((h * per_hour + i + 1) as f64 * report_period_s, *v));
        }
    }
    out
}

/// All included positives plus enough randomly chosen included negatives
/// to bring the positive share to `positive_fraction` (or every negative if
/// there are too few). Output is sorted by patient id.
pub fn balance(records: &[LabelRecord], positive_fraction: f64, seed: u64) -> Result<Vec<LabelRecord>, LabelError> {
    if !(positive_fraction > 0.0 && positive_fraction <= 1.0) {
        return Err(LabelError::Parameter(format!("positive fraction {positive_fraction}")));
    }
    let mut sorted: Vec<&LabelRecord> = records.iter().filter(|r| r.included).collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let (pos, mut neg): (Vec<&LabelRecord>, Vec<&LabelRecord>) = sorted.into_iter().partition(|r| r.label.positive);
    let want = ((pos.len() as f64) * (1.0 - positive_fraction) / positive_fraction).round() as usize;
    neg.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    neg.truncate(want);
    let mut out: Vec<LabelRecord> = pos.into_iter().chain(neg).cloned().collect();
    out.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(out)
}
