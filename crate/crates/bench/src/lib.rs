//! Inputs shared by the benchmarks.

use cardiax_core::datastore::{encode_chunk_into, Chunk};
use cardiax_core::pipeline::{chunks_from_items, StreamItem, SyntheticSource};
use cardiax_core::siggen::{generate_scg, AccStream, ScgConfig};

/// Noisy constant-vital record from both sensors.
pub fn scg_record(duration_s: f64, seed: u64) -> (AccStream, AccStream) {
    let cfg = ScgConfig { duration: duration_s, snr_db: 15.0, seed, ..ScgConfig::default() };
    let (a1, a2, _) = generate_scg(&cfg).expect("valid config");
    (a1, a2)
}

/// One-second ACC_FRAME chunks plus temperature readings.
pub fn frame_chunks(duration_s: f64, seed: u64) -> Vec<Chunk> {
    let cfg = ScgConfig::default();
    let items: Vec<StreamItem> =
        SyntheticSource::new(cfg.trajectory(), cfg.fs, 15.0, seed, duration_s).expect("valid source").collect();
    chunks_from_items(&items, cfg.fs, cfg.fs as usize).expect("chunkable")
}

pub fn encode_all(chunks: &[Chunk]) -> Vec<u8> {
    let mut out = Vec::new();
    for c in chunks {
        encode_chunk_into(c, &mut out).expect("encodable");
    }
    out
}
