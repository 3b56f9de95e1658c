//! Deterministic synthetic dual-site seismocardiogram.
//!
//! Each heartbeat is a Gaussian-windowed 25 Hz burst placed on the lateral
//! (x), vertical (y) and z axes of the xiphoid sensor (ACC1) and, delayed by
//! the pulse transit time, on the sternal sensor (ACC2). Respiration shows up
//! as a sinusoidal z baseline and as 20% amplitude modulation of the beats.
//! The y axis carries 1 g of gravity. White Gaussian noise is scaled against
//! the average power of the heartbeat component on y.
//!
//! Rendering is analytic per sample, so the ACC2 delay is exact at sub-sample
//! resolution. Output is bit-identical for identical configuration and seed,
//! independent of the block size used to pull samples.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FS: f64 = 120.0;
/// Carrier of the heartbeat wavelet (Hz).
pub const BEAT_CARRIER_HZ: f64 = 25.0;
/// Standard deviation of the wavelet's Gaussian window (s).
pub const BEAT_SIGMA_S: f64 = 0.015;
/// Peak heartbeat amplitude on the y axis (g).
pub const BEAT_AMPLITUDE_G: f64 = 0.02;
/// Relative beat amplitude per axis (x, y, z).
pub const BEAT_AXIS_WEIGHTS: [f64; 3] = [0.5, 1.0, 0.3];
/// Respiratory amplitude modulation depth of the beat train.
pub const RESP_AM_DEPTH: f64 = 0.2;
/// Respiratory baseline amplitude on z (g).
pub const RESP_AMPLITUDE_G: f64 = 0.05;
pub const GRAVITY_G: f64 = 1.0;
/// Sensor full scale (g).
pub const FULL_SCALE_G: f64 = 2.0;

const WAVELET_SUPPORT_S: f64 = 5.0 * BEAT_SIGMA_S;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SiggenError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SiggenError {
    SiggenError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Site {
    /// Over the xiphoid process.
    Acc1Xiphoid,
    /// 12 cm towards the suprasternal notch.
    Acc2Sternal,
}

/// Three-axis acceleration in g from one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AccStream {
    pub fs: f64,
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub az: Vec<f64>,
    pub site: Site,
}

impl AccStream {
    pub fn empty(fs: f64, site: Site) -> Self {
        Self { fs, ax: Vec::new(), ay: Vec::new(), az: Vec::new(), site }
    }

    pub fn len(&self) -> usize {
        self.ax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ax.is_empty()
    }

    fn with_len(fs: f64, site: Site, n: usize) -> Self {
        Self { fs, ax: vec![0.0; n], ay: vec![0.0; n], az: vec![0.0; n], site }
    }

    pub fn axes(&self) -> [&[f64]; 3] {
        [&self.ax, &self.ay, &self.az]
    }

    fn axes_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.ax, &mut self.ay, &mut self.az]
    }

    fn extend_from(&mut self, other: &AccStream) {
        self.ax.extend_from_slice(&other.ax);
        self.ay.extend_from_slice(&other.ay);
        self.az.extend_from_slice(&other.az);
    }
}

/// Constant-vital configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScgConfig {
    pub fs: f64,
    /// Seconds.
    pub duration: f64,
    pub hr_bpm: f64,
    pub rr_brpm: f64,
    pub ptt_ms: f64,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for ScgConfig {
    fn default() -> Self {
        Self {
            fs: DEFAULT_FS,
            duration: 120.0,
            hr_bpm: 72.0,
            rr_brpm: 15.0,
            ptt_ms: 40.0,
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

impl ScgConfig {
    pub fn validate(&self) -> Result<(), SiggenError> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(invalid("fs", format!("must be positive, got {}", self.fs)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("must be positive, got {}", self.duration)));
        }
        validate_vitals(self.hr_bpm, self.rr_brpm, self.ptt_ms)?;
        if self.snr_db.is_nan() {
            return Err(invalid("snr_db", "must not be NaN"));
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::constant(Keyframe {
            t_s: 0.0,
            hr_bpm: self.hr_bpm,
            rr_brpm: self.rr_brpm,
            ptt_ms: self.ptt_ms,
            temp_c: NOMINAL_TEMP_C,
        })
    }
}

fn validate_vitals(hr: f64, rr: f64, ptt: f64) -> Result<(), SiggenError> {
    if !(30.0..=220.0).contains(&hr) {
        return Err(invalid("hr_bpm", format!("must lie in [30, 220], got {hr}")));
    }
    if !(4.0..=46.8).contains(&rr) {
        return Err(invalid("rr_brpm", format!("must lie in [4, 46.8], got {rr}")));
    }
    if !(ptt >= 0.0 && ptt.is_finite()) {
        return Err(invalid("ptt_ms", format!("must be >= 0, got {ptt}")));
    }
    Ok(())
}

pub const NOMINAL_TEMP_C: f64 = 37.0;

/// Vital values in force from `t_s` on (linearly interpolated to the next
/// keyframe).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_s: f64,
    pub hr_bpm: f64,
    pub rr_brpm: f64,
    pub ptt_ms: f64,
    pub temp_c: f64,
}

/// Piecewise-linear vital trajectory. Values are held constant before the
/// first and after the last keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    keyframes: Vec<Keyframe>,
}

impl Trajectory {
    pub fn constant(k: Keyframe) -> Self {
        Self { keyframes: vec![k] }
    }

    pub fn new(mut keyframes: Vec<Keyframe>) -> Result<Self, SiggenError> {
        if keyframes.is_empty() {
            return Err(invalid("keyframes", "at least one keyframe required"));
        }
        keyframes.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
        for k in &keyframes {
            validate_vitals(k.hr_bpm, k.rr_brpm, k.ptt_ms)?;
            if !k.temp_c.is_finite() {
                return Err(invalid("temp_c", "must be finite"));
            }
        }
        Ok(Self { keyframes })
    }

    pub fn at(&self, t: f64) -> Keyframe {
        let ks = &self.keyframes;
        if t <= ks[0].t_s {
            return Keyframe { t_s: t, ..ks[0] };
        }
        let i = ks.partition_point(|k| k.t_s <= t);
        if i == ks.len() {
            return Keyframe { t_s: t, ..ks[i - 1] };
        }
        let (a, b) = (ks[i - 1], ks[i]);
        let u = (t - a.t_s) / (b.t_s - a.t_s);
        let lerp = |x: f64, y: f64| x + u * (y - x);
        Keyframe {
            t_s: t,
            hr_bpm: lerp(a.hr_bpm, b.hr_bpm),
            rr_brpm: lerp(a.rr_brpm, b.rr_brpm),
            ptt_ms: lerp(a.ptt_ms, b.ptt_ms),
            temp_c: lerp(a.temp_c, b.temp_c),
        }
    }
}

/// What the generator put into the signal.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Beat centres at ACC1 (s).
    pub beat_times: Vec<f64>,
    /// Beat centres at ACC2 (s).
    pub acc2_beat_times: Vec<f64>,
    /// Respiratory frequency at the start of the record (Hz).
    pub breath_hz: f64,
    /// ACC1→ACC2 delay at the start of the record (ms).
    pub ptt_ms: f64,
}

/// The additive parts of a generated record, before clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScgComponents {
    /// Heartbeat wavelet trains, [ACC1, ACC2].
    pub beats: [AccStream; 2],
    /// Gravity and respiration baseline.
    pub baseline: [AccStream; 2],
    pub noise: [AccStream; 2],
    pub truth: GroundTruth,
}

impl ScgComponents {
    /// Sum of the components, clipped to the sensor range.
    pub fn combined(&self) -> (AccStream, AccStream) {
        let sum = |i: usize| {
            let mut out = self.beats[i].clone();
            for (axis, (b, n)) in
                out.axes_mut().into_iter().zip(self.baseline[i].axes().into_iter().zip(self.noise[i].axes()))
            {
                for ((v, bv), nv) in axis.iter_mut().zip(b).zip(n) {
                    *v = (*v + bv + nv).clamp(-FULL_SCALE_G, FULL_SCALE_G);
                }
            }
            out
        };
        (sum(0), sum(1))
    }
}

/// Unit-amplitude heartbeat wavelet centred at zero.
#[inline]
pub fn beat_wavelet(t: f64) -> f64 {
    (-(t * t) / (2.0 * BEAT_SIGMA_S * BEAT_SIGMA_S)).exp() * (2.0 * PI * BEAT_CARRIER_HZ * t).cos()
}

/// Mean power of the y-axis heartbeat component at a steady heart rate,
/// averaged over the respiratory modulation.
pub fn beat_power(hr_bpm: f64) -> f64 {
    let s2 = BEAT_SIGMA_S * BEAT_SIGMA_S;
    let w = 2.0 * PI * BEAT_CARRIER_HZ;
    // ∫ exp(-t²/σ²) cos²(ωt) dt
    let energy = 0.5 * BEAT_SIGMA_S * PI.sqrt() * (1.0 + (-w * w * s2).exp());
    let am = 1.0 + RESP_AM_DEPTH * RESP_AM_DEPTH / 2.0;
    BEAT_AMPLITUDE_G * BEAT_AMPLITUDE_G * (hr_bpm / 60.0) * energy * am
}

/// Noise standard deviation that puts the y-axis heartbeat `snr_db` above
/// the noise.
pub fn noise_sigma(hr_bpm: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        (beat_power(hr_bpm) / 10f64.powf(snr_db / 10.0)).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct Beat {
    t1: f64,
    t2: f64,
}

/// One block of generator output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScgBlock {
    /// Index of the first sample in the record.
    pub start: u64,
    pub components: ScgComponents,
}

/// Pull-based renderer for arbitrarily long records.
#[derive(Debug, Clone)]
pub struct ScgGenerator {
    fs: f64,
    traj: Trajectory,
    sigma: f64,
    rng: ChaCha8Rng,
    next_sample: u64,
    next_beat_t: f64,
    beats: VecDeque<Beat>,
    // respiratory phase (rad) at `next_sample`
    resp_phase: f64,
}

impl ScgGenerator {
    pub fn new(fs: f64, traj: Trajectory, snr_db: f64, seed: u64) -> Result<Self, SiggenError> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(invalid("fs", format!("must be positive, got {fs}")));
        }
        if snr_db.is_nan() {
            return Err(invalid("snr_db", "must not be NaN"));
        }
        let k0 = traj.at(0.0);
        validate_vitals(k0.hr_bpm, k0.rr_brpm, k0.ptt_ms)?;
        Ok(Self {
            fs,
            sigma: noise_sigma(k0.hr_bpm, snr_db),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_sample: 0,
            next_beat_t: 0.0,
            beats: VecDeque::new(),
            resp_phase: 0.0,
            traj,
        })
    }

    pub fn from_config(cfg: &ScgConfig) -> Result<Self, SiggenError> {
        cfg.validate()?;
        Self::new(cfg.fs, cfg.trajectory(), cfg.snr_db, cfg.seed)
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    /// Index of the next sample to be rendered.
    pub fn position(&self) -> u64 {
        self.next_sample
    }

    fn schedule_beats(&mut self, until: f64) {
        while self.next_beat_t <= until {
            let t = self.next_beat_t;
            let k = self.traj.at(t);
            self.beats.push_back(Beat { t1: t, t2: t + k.ptt_ms / 1000.0 });
            self.next_beat_t = t + 60.0 / k.hr_bpm;
        }
    }

    /// Renders the next `n` samples.
    pub fn next_block(&mut self, n: usize) -> ScgBlock {
        let fs = self.fs;
        let start = self.next_sample;
        let t0 = start as f64 / fs;
        let t_end = (start + n as u64) as f64 / fs;
        self.schedule_beats(t_end + WAVELET_SUPPORT_S);
        while let Some(b) = self.beats.front() {
            if b.t2.max(b.t1) + WAVELET_SUPPORT_S < t0 {
                self.beats.pop_front();
            } else {
                break;
            }
        }

        let mut beats = [AccStream::with_len(fs, Site::Acc1Xiphoid, n), AccStream::with_len(fs, Site::Acc2Sternal, n)];
        let mut baseline = beats.clone();
        let mut noise = beats.clone();

        // respiration phase, AM gain and baseline per sample
        let mut resp_gain = vec![0.0; n];
        for i in 0..n {
            let t = (start + i as u64) as f64 / fs;
            let k = self.traj.at(t);
            let s = self.resp_phase.sin();
            resp_gain[i] = 1.0 + RESP_AM_DEPTH * s;
            for site in &mut baseline {
                site.ay[i] = GRAVITY_G;
                site.az[i] = RESP_AMPLITUDE_G * s;
            }
            self.resp_phase += 2.0 * PI * k.rr_brpm / 60.0 / fs;
            if self.resp_phase > 2.0 * PI {
                self.resp_phase -= 2.0 * PI;
            }
        }

        let support = (WAVELET_SUPPORT_S * fs).ceil() as i64;
        for b in &self.beats {
            for (site, centre) in beats.iter_mut().zip([b.t1, b.t2]) {
                let c = (centre * fs).round() as i64 - start as i64;
                let lo = (c - support).max(0);
                let hi = (c + support).min(n as i64 - 1);
                for i in lo..=hi {
                    let i = i as usize;
                    let t = (start + i as u64) as f64 / fs;
                    let v = BEAT_AMPLITUDE_G * resp_gain[i] * beat_wavelet(t - centre);
                    for (axis, w) in site.axes_mut().into_iter().zip(BEAT_AXIS_WEIGHTS) {
                        axis[i] += w * v;
                    }
                }
            }
        }

        if self.sigma > 0.0 {
            for i in 0..n {
                for site in &mut noise {
                    for axis in site.axes_mut() {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        axis[i] = self.sigma * z;
                    }
                }
            }
        }

        let in_block = |t: f64| t >= t0 && t < t_end;
        let truth = GroundTruth {
            beat_times: self.beats.iter().map(|b| b.t1).filter(|&t| in_block(t)).collect(),
            acc2_beat_times: self.beats.iter().map(|b| b.t2).filter(|&t| in_block(t)).collect(),
            breath_hz: self.traj.at(t0).rr_brpm / 60.0,
            ptt_ms: self.traj.at(t0).ptt_ms,
        };
        self.next_sample += n as u64;
        ScgBlock { start, components: ScgComponents { beats, baseline, noise, truth } }
    }
}

/// Renders a whole constant-vital record and returns its components.
pub fn generate_components(cfg: &ScgConfig) -> Result<ScgComponents, SiggenError> {
    let mut g = ScgGenerator::from_config(cfg)?;
    let n = (cfg.duration * cfg.fs).round() as usize;
    Ok(g.next_block(n).components)
}

/// Renders a constant-vital record: (ACC1, ACC2, ground truth).
pub fn generate_scg(cfg: &ScgConfig) -> Result<(AccStream, AccStream, GroundTruth), SiggenError> {
    let c = generate_components(cfg)?;
    let (a1, a2) = c.combined();
    Ok((a1, a2, c.truth))
}

/// Concatenates consecutive blocks into one record.
pub fn concat_blocks(blocks: &[ScgBlock]) -> Option<(AccStream, AccStream)> {
    let first = blocks.first()?;
    let (mut a1, mut a2) = first.components.combined();
    for b in &blocks[1..] {
        let (x1, x2) = b.components.combined();
        a1.extend_from(&x1);
        a2.extend_from(&x2);
    }
    Some((a1, a2))
}
