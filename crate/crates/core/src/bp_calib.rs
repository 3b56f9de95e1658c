//! Linear PTT to systolic-pressure calibration with leave-one-out scoring.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BpError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("need at least 3 subjects for leave-one-out, got {0}")]
    TooFewSubjects(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// SBP = slope * PTT + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpModel {
    /// mmHg per ms.
    pub slope: f64,
    /// mmHg.
    pub intercept: f64,
}

impl Default for BpModel {
    fn default() -> Self {
        Self { slope: -1.0, intercept: 160.0 }
    }
}

impl BpModel {
    pub fn new(slope: f64, intercept: f64) -> Result<Self, BpError> {
        if !(slope.is_finite() && intercept.is_finite()) {
            return Err(BpError::Parameter(format!("non-finite model ({slope}, {intercept})")));
        }
        Ok(Self { slope, intercept })
    }

    pub fn estimate(&self, ptt_ms: f64) -> Result<f64, BpError> {
        if !(ptt_ms > 0.0 && ptt_ms.is_finite()) {
            return Err(BpError::Parameter(format!("PTT must be positive, got {ptt_ms}")));
        }
        Ok(self.slope * ptt_ms + self.intercept)
    }
}

/// Per-segment means of one subject: (PTT ms, reference SBP mmHg).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub segments: Vec<(f64, f64)>,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, segments: Vec<(f64, f64)>) -> Result<Self, BpError> {
        let subject_id = subject_id.into();
        if segments.is_empty() {
            return Err(BpError::Parameter(format!("subject {subject_id} has no segments")));
        }
        if let Some(&(p, s)) = segments.iter().find(|(p, s)| !(*p > 0.0 && p.is_finite() && s.is_finite())) {
            return Err(BpError::Parameter(format!("subject {subject_id}: bad segment ({p}, {s})")));
        }
        Ok(Self { subject_id, segments })
    }
}

/// Ordinary least squares over every pooled segment.
pub fn fit(records: &[SubjectRecord]) -> Result<BpModel, BpError> {
    fit_points(records.iter().flat_map(|r| r.segments.iter().copied()))
}

fn fit_points(points: impl Iterator<Item = (f64, f64)>) -> Result<BpModel, BpError> {
    let pts: Vec<(f64, f64)> = points.collect();
    if pts.len() < 2 {
        return Err(BpError::DegenerateFit(format!("{} point(s)", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0).powi(2) * n {
        return Err(BpError::DegenerateFit("all PTT values are equal".into()));
    }
    let slope = sxy / sxx;
    BpModel::new(slope, my - slope * mx)
}

/// Signed error statistics (estimate minus reference).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    pub n: usize,
}

impl ErrorStats {
    pub fn from_errors(e: &[f64]) -> Self {
        let n = e.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = e.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean, sd, n }
    }

    /// Whether every error lies within the given bound.
    pub fn within(errors: &[f64], bound: f64) -> bool {
        errors.iter().all(|e| e.abs() <= bound)
    }
}

/// Leave-one-out report: the pooled statistics plus the raw errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub stats: ErrorStats,
    pub errors: Vec<f64>,
    pub fits: usize,
}

/// Fits on n-1 subjects and predicts the held-out one, for each subject.
pub fn loo_evaluate(records: &[SubjectRecord]) -> Result<LooReport, BpError> {
    if records.len() < 3 {
        return Err(BpError::TooFewSubjects(records.len()));
    }
    let mut errors = Vec::new();
    let mut fits = 0;
    for (k, held) in records.iter().enumerate() {
        let model = fit_points(
            records.iter().enumerate().filter(|(i, _)| *i != k).flat_map(|(_, r)| r.segments.iter().copied()),
        )?;
        fits += 1;
        for &(ptt, sbp) in &held.segments {
            errors.push(model.estimate(ptt)? - sbp);
        }
    }
    Ok(LooReport { stats: ErrorStats::from_errors(&errors), errors, fits })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    subject_id: String,
    ptt_ms: f64,
    sbp_mmhg: f64,
}

/// Reads `subject_id,ptt_ms,sbp_mmhg`; subjects keep first-seen order.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<SubjectRecord>, BpError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: CsvRow = row?;
        if !by_id.contains_key(&row.subject_id) {
            order.push(row.subject_id.clone());
        }
        by_id.entry(row.subject_id).or_default().push((row.ptt_ms, row.sbp_mmhg));
    }
    order
        .into_iter()
        .map(|id| {
            let segs = by_id.remove(&id).unwrap_or_default();
            SubjectRecord::new(id, segs)
        })
        .collect()
}

pub fn write_csv<W: Write>(w: W, records: &[SubjectRecord]) -> Result<(), BpError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        for &(ptt_ms, sbp_mmhg) in &r.segments {
            wr.serialize(CsvRow { subject_id: r.subject_id.clone(), ptt_ms, sbp_mmhg })?;
        }
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parameters of a synthetic calibration cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub subjects: usize,
    pub segments_per_subject: usize,
    pub truth: BpModel,
    pub noise_sd: f64,
    pub ptt_range_ms: (f64, f64),
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects: 10,
            segments_per_subject: 5,
            truth: BpModel::default(),
            noise_sd: 5.0,
            ptt_range_ms: (20.0, 60.0),
            seed: 0,
        }
    }
}

/// Subjects with PTT drawn uniformly over the range and SBP on the true
/// line plus Gaussian noise.
pub fn synthetic_cohort(spec: &CohortSpec) -> Result<Vec<SubjectRecord>, BpError> {
    if spec.noise_sd < 0.0 || !(spec.ptt_range_ms.0 > 0.0 && spec.ptt_range_ms.1 > spec.ptt_range_ms.0) {
        return Err(BpError::Parameter("bad cohort spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| BpError::Parameter(e.to_string()))?;
    let ptt = rand_distr::Uniform::new(spec.ptt_range_ms.0, spec.ptt_range_ms.1)
        .map_err(|e| BpError::Parameter(e.to_string()))?;
    (0..spec.subjects)
        .map(|s| {
            let segs = (0..spec.segments_per_subject)
                .map(|_| {
                    let p = ptt.sample(&mut rng);
                    (p, spec.truth.slope * p + spec.truth.intercept + noise.sample(&mut rng))
                })
                .collect();
            SubjectRecord::new(format!("S{:02}", s + 1), segs)
        })
        .collect()
}
