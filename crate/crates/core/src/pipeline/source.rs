use std::collections::VecDeque;

use super::PipelineError;
use crate::bp_calib::BpModel;
use crate::datastore::{AccFramePayload, Chunk, ChunkType, DataError, VitalCode, VitalsPayload};
use crate::dsp::extract::{AccFrame, ExtractorConfig, VitalExtractor, WindowReport};
use crate::siggen::{ScgGenerator, Trajectory};

/// Input to the stream runner.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    /// Consecutive frames starting at absolute sample `start_index`.
    Frames { start_index: u64, frames: Vec<AccFrame> },
    /// Body temperature reading taken at `t_s`.
    Temperature { t_s: f64, celsius: f64 },
}

/// Renders a synthetic patient as runner input: 1 s blocks of frames and a
/// temperature reading every `temp_period_s`. Values are rounded to f32, the
/// precision of the sensor and of the chunk format.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    gen: ScgGenerator,
    total: u64,
    block: usize,
    temp_period_s: f64,
    next_temp: f64,
    gaps: Vec<(f64, f64)>,
    pending: VecDeque<StreamItem>,
}

pub const TEMP_PERIOD_S: f64 = 120.0;

impl SyntheticSource {
    pub fn new(traj: Trajectory, fs: f64, snr_db: f64, seed: u64, duration_s: f64) -> Result<Self, PipelineError> {
        if !(duration_s >= 0.0 && duration_s.is_finite()) {
            return Err(PipelineError::Parameter(format!("duration {duration_s}")));
        }
        let gen = ScgGenerator::new(fs, traj, snr_db, seed)?;
        Ok(Self {
            total: (duration_s * fs).round() as u64,
            block: (fs.round() as usize).max(1),
            gen,
            temp_period_s: TEMP_PERIOD_S,
            next_temp: 0.0,
            gaps: Vec::new(),
            pending: VecDeque::new(),
        })
    }

    /// Drops the frames of `[start_s, end_s)`, as if the sensor stalled.
    pub fn with_gap(mut self, start_s: f64, end_s: f64) -> Self {
        self.gaps.push((start_s, end_s));
        self
    }

    fn in_gap(&self, t: f64) -> bool {
        self.gaps.iter().any(|&(a, b)| t >= a && t < b)
    }

    fn render_block(&mut self) {
        let fs = self.gen.fs();
        let start = self.gen.position();
        let n = (self.total - start).min(self.block as u64) as usize;
        let t_end = (start + n as u64) as f64 / fs;
        while self.next_temp < t_end {
            let c = self.gen.trajectory().at(self.next_temp).temp_c as f32 as f64;
            self.pending.push_back(StreamItem::Temperature { t_s: self.next_temp, celsius: c });
            self.next_temp += self.temp_period_s;
        }
        let (a1, a2) = self.gen.next_block(n).components.combined();
        let mut run: Option<(u64, Vec<AccFrame>)> = None;
        for i in 0..n {
            let idx = start + i as u64;
            if self.in_gap(idx as f64 / fs) {
                if let Some((s, f)) = run.take() {
                    self.pending.push_back(StreamItem::Frames { start_index: s, frames: f });
                }
                continue;
            }
            let r = |v: f64| v as f32 as f64;
            let frame = AccFrame {
                acc1: [r(a1.ax[i]), r(a1.ay[i]), r(a1.az[i])],
                acc2: [r(a2.ax[i]), r(a2.ay[i]), r(a2.az[i])],
            };
            run.get_or_insert_with(|| (idx, Vec::with_capacity(n))).1.push(frame);
        }
        if let Some((s, f)) = run {
            self.pending.push_back(StreamItem::Frames { start_index: s, frames: f });
        }
    }
}

impl Iterator for SyntheticSource {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        while self.pending.is_empty() && self.gen.position() < self.total {
            self.render_block();
        }
        self.pending.pop_front()
    }
}

fn index_to_us(index: u64, fs: f64) -> u64 {
    (index as f64 * 1e6 / fs).round() as u64
}

fn us_to_index(us: u64, fs: f64) -> u64 {
    (us as f64 * fs / 1e6).round() as u64
}

/// ACC_FRAME and VITALS chunks carrying the items; frames are split into
/// chunks of at most `frames_per_chunk`.
pub fn chunks_from_items(items: &[StreamItem], fs: f64, frames_per_chunk: usize) -> Result<Vec<Chunk>, PipelineError> {
    if frames_per_chunk == 0 || frames_per_chunk > u16::MAX as usize {
        return Err(PipelineError::Parameter(format!("frames per chunk {frames_per_chunk}")));
    }
    let mut out = Vec::new();
    for item in items {
        match item {
            StreamItem::Frames { start_index, frames } => {
                for (i, part) in frames.chunks(frames_per_chunk).enumerate() {
                    let start = start_index + (i * frames_per_chunk) as u64;
                    let p = AccFramePayload {
                        fs: fs as f32,
                        frames: part
                            .iter()
                            .map(|f| {
                                let mut v = [0f32; 6];
                                for a in 0..3 {
                                    v[a] = f.acc1[a] as f32;
                                    v[a + 3] = f.acc2[a] as f32;
                                }
                                v
                            })
                            .collect(),
                    };
                    out.push(Chunk::new(ChunkType::AccFrame, index_to_us(start, fs), p.encode()?)?);
                }
            }
            StreamItem::Temperature { t_s, celsius } => {
                let p = VitalsPayload { entries: vec![(VitalCode::Temperature, *celsius as f32)] };
                out.push(Chunk::new(ChunkType::Vitals, (t_s * 1e6).round() as u64, p.encode()?)?);
            }
        }
    }
    Ok(out)
}

/// Runner input from chunks. Frame chunks must share one sample rate;
/// VITALS chunks contribute their temperature entries and other chunk
/// types are ignored. Returns the sample rate (None without frames).
pub fn items_from_chunks(chunks: &[Chunk]) -> Result<(Option<f64>, Vec<StreamItem>), PipelineError> {
    let mut fs: Option<f64> = None;
    let mut items = Vec::new();
    for c in chunks {
        match c.kind {
            ChunkType::AccFrame => {
                let p = AccFramePayload::decode(&c.payload)?;
                let f = p.fs as f64;
                match fs {
                    None => fs = Some(f),
                    Some(g) if g != f => {
                        return Err(DataError::Payload { offset: 0, msg: format!("sample rate {f} after {g}") }.into())
                    }
                    _ => {}
                }
                let frames = p
                    .frames
                    .iter()
                    .map(|v| AccFrame {
                        acc1: [v[0] as f64, v[1] as f64, v[2] as f64],
                        acc2: [v[3] as f64, v[4] as f64, v[5] as f64],
                    })
                    .collect();
                items.push(StreamItem::Frames { start_index: us_to_index(c.timestamp_us, f), frames });
            }
            ChunkType::Vitals => {
                let p = VitalsPayload::decode(&c.payload)?;
                if let Some(v) = p.get(VitalCode::Temperature) {
                    items.push(StreamItem::Temperature { t_s: c.timestamp_us as f64 / 1e6, celsius: v as f64 });
                }
            }
            _ => {}
        }
    }
    Ok((fs, items))
}

/// Runs the vitals extractor over the frames of `items`.
pub fn extract_items(
    cfg: ExtractorConfig,
    bp: Option<BpModel>,
    items: &[StreamItem],
) -> Result<Vec<WindowReport>, PipelineError> {
    let mut ex = VitalExtractor::new(cfg, bp)?;
    let mut out = Vec::new();
    for it in items {
        if let StreamItem::Frames { start_index, frames } = it {
            for (j, f) in frames.iter().enumerate() {
                out.extend(ex.push(*start_index as usize + j, *f));
            }
        }
    }
    Ok(out)
}
