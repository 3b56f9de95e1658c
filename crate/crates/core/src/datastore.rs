//! Framed binary chunks and bundles for sensor frames, vitals and events.
//!
//! ```text
//! chunk:  u8 tag | u64 timestamp_us | u24 length | payload | u32 CRC32
//! bundle: "ICXB" | u16 version | u32 count | chunk* | u32 CRC32
//! ```
//! Little-endian throughout. Chunk CRCs cover the chunk's preceding bytes,
//! the bundle CRC covers everything before it. CRC32 is the IEEE
//! polynomial.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};

pub const MAX_PAYLOAD: usize = (1 << 24) - 1;
pub const CHUNK_OVERHEAD: usize = 16;
pub const BUNDLE_MAGIC: &[u8; 4] = b"ICXB";
pub const BUNDLE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("truncated at byte {offset}: need {need} more byte(s)")]
    Truncated { offset: usize, need: usize },
    #[error("CRC mismatch at byte {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { offset: usize, stored: u32, computed: u32 },
    #[error("unknown chunk tag {tag} at byte {offset}")]
    UnknownTag { offset: usize, tag: u8 },
    #[error("payload of {len} bytes exceeds {MAX_PAYLOAD}")]
    Oversize { len: usize },
    #[error("bad bundle magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported bundle version {found} at byte {offset}")]
    Version { offset: usize, found: u16 },
    #[error("bundle declares {declared} chunks but {found} follow (byte {offset})")]
    CountMismatch { offset: usize, declared: u32, found: u32 },
    #[error("malformed payload at byte {offset}: {msg}")]
    Payload { offset: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<FormatError> for DataError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Truncated { offset, need } => Self::Truncated { offset, need },
            FormatError::Crc { offset, stored, computed } => Self::CrcMismatch { offset, stored, computed },
            FormatError::BadMagic { offset, .. } => Self::BadMagic { offset },
            FormatError::Version { offset, found } => Self::Version { offset, found },
            FormatError::Invariant { offset, msg } => Self::Payload { offset, msg },
            FormatError::Trailing { offset, extra } => {
                Self::Payload { offset, msg: format!("{extra} trailing byte(s)") }
            }
        }
    }
}

impl DataError {
    fn shifted(self, by: usize) -> Self {
        match self {
            Self::Truncated { offset, need } => Self::Truncated { offset: offset + by, need },
            Self::CrcMismatch { offset, stored, computed } => {
                Self::CrcMismatch { offset: offset + by, stored, computed }
            }
            Self::UnknownTag { offset, tag } => Self::UnknownTag { offset: offset + by, tag },
            Self::Payload { offset, msg } => Self::Payload { offset: offset + by, msg },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ChunkType {
    AccFrame = 1,
    Vitals = 2,
    Prediction = 3,
    Event = 4,
}

impl ChunkType {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Self::AccFrame,
            2 => Self::Vitals,
            3 => Self::Prediction,
            4 => Self::Event,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AccFrame => "ACC_FRAME",
            Self::Vitals => "VITALS",
            Self::Prediction => "PREDICTION",
            Self::Event => "EVENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub kind: ChunkType,
    pub timestamp_us: u64,
    pub payload: Vec<u8>,
}

impl Chunk {
    pub fn new(kind: ChunkType, timestamp_us: u64, payload: Vec<u8>) -> Result<Self, DataError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(DataError::Oversize { len: payload.len() });
        }
        Ok(Self { kind, timestamp_us, payload })
    }

    pub fn encoded_len(&self) -> usize {
        CHUNK_OVERHEAD + self.payload.len()
    }
}

pub fn encode_chunk_into(c: &Chunk, out: &mut Vec<u8>) -> Result<(), DataError> {
    if c.payload.len() > MAX_PAYLOAD {
        return Err(DataError::Oversize { len: c.payload.len() });
    }
    let start = out.len();
    out.push(c.kind as u8);
    out.extend_from_slice(&c.timestamp_us.to_le_bytes());
    out.extend_from_slice(&(c.payload.len() as u32).to_le_bytes()[..3]);
    out.extend_from_slice(&c.payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(())
}

pub fn encode_chunk(c: &Chunk) -> Result<Vec<u8>, DataError> {
    let mut v = Vec::with_capacity(c.encoded_len());
    encode_chunk_into(c, &mut v)?;
    Ok(v)
}

/// Decodes the chunk at the start of `buf`; returns it with its length.
/// Offsets in errors are relative to `buf`.
pub fn decode_chunk(buf: &[u8]) -> Result<(Chunk, usize), DataError> {
    let mut r = Reader::new(buf);
    let tag = r.u8()?;
    let timestamp_us = r.u64()?;
    let len = r.u24()? as usize;
    let payload = r.take(len)?;
    let body_len = r.pos();
    let crc_at = r.pos();
    let stored = r.u32()?;
    let computed = crc32fast::hash(&buf[..body_len]);
    if stored != computed {
        return Err(DataError::CrcMismatch { offset: crc_at, stored, computed });
    }
    let kind = ChunkType::from_tag(tag).ok_or(DataError::UnknownTag { offset: 0, tag })?;
    Ok((Chunk { kind, timestamp_us, payload: payload.to_vec() }, r.pos()))
}

/// Decodes back-to-back chunks; returns each with its starting offset.
pub fn decode_stream(buf: &[u8]) -> Result<Vec<(usize, Chunk)>, DataError> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < buf.len() {
        let (c, n) = decode_chunk(&buf[at..]).map_err(|e| e.shifted(at))?;
        out.push((at, c));
        at += n;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bundle {
    pub chunks: Vec<Chunk>,
}

pub fn write_bundle(b: &Bundle) -> Result<Vec<u8>, DataError> {
    let count = u32::try_from(b.chunks.len()).map_err(|_| DataError::Oversize { len: b.chunks.len() })?;
    let mut out = Vec::with_capacity(14 + b.chunks.iter().map(Chunk::encoded_len).sum::<usize>());
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for c in &b.chunks {
        encode_chunk_into(c, &mut out)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn read_bundle(buf: &[u8]) -> Result<Bundle, DataError> {
    let mut r = Reader::new(buf);
    r.magic(BUNDLE_MAGIC)?;
    let at = r.pos();
    let version = r.u16()?;
    if version != BUNDLE_VERSION {
        return Err(DataError::Version { offset: at, found: version });
    }
    let count_at = r.pos();
    let declared = r.u32()?;
    if buf.len() < r.pos() + 4 {
        return Err(DataError::Truncated { offset: buf.len(), need: r.pos() + 4 - buf.len() });
    }
    let end = buf.len() - 4;
    let mut chunks = Vec::new();
    let mut at = r.pos();
    while at < end {
        let (c, n) = decode_chunk(&buf[at..end]).map_err(|e| e.shifted(at))?;
        chunks.push(c);
        at += n;
    }
    if chunks.len() as u64 != declared as u64 {
        return Err(DataError::CountMismatch { offset: count_at, declared, found: chunks.len() as u32 });
    }
    let stored = u32::from_le_bytes(buf[end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&buf[..end]);
    if stored != computed {
        return Err(DataError::CrcMismatch { offset: end, stored, computed });
    }
    Ok(Bundle { chunks })
}

pub fn write_bundle_file(b: &Bundle, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, write_bundle(b)?)?;
    Ok(())
}

pub fn read_bundle_file(path: &Path) -> Result<Bundle, DataError> {
    read_bundle(&std::fs::read(path)?)
}

/// ACC_FRAME payload: `u16 n | f32 fs | n x (acc1 xyz, acc2 xyz) f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccFramePayload {
    pub fs: f32,
    pub frames: Vec<[f32; 6]>,
}

impl AccFramePayload {
    pub fn encode(&self) -> Result<Vec<u8>, DataError> {
        let n = u16::try_from(self.frames.len()).map_err(|_| DataError::Oversize { len: self.frames.len() })?;
        let mut w = Writer::new();
        w.u16(n);
        w.f32(self.fs);
        for f in &self.frames {
            w.f32s(f);
        }
        Ok(w.buf)
    }

    pub fn decode(p: &[u8]) -> Result<Self, DataError> {
        let mut r = Reader::new(p);
        let n = r.u16()? as usize;
        let at = r.pos();
        let fs = r.f32()?;
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(DataError::Payload { offset: at, msg: format!("sample rate {fs}") });
        }
        let vals = r.f32s(n * 6)?;
        if r.remaining() != 0 {
            return Err(DataError::Payload { offset: r.pos(), msg: "trailing bytes".into() });
        }
        let frames = vals.chunks_exact(6).map(|c| c.try_into().expect("6 values")).collect();
        Ok(Self { fs, frames })
    }
}

/// Codes used in VITALS payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum VitalCode {
    HeartRate = 1,
    SystolicBp = 2,
    RespiratoryRate = 3,
    Temperature = 4,
    PulseTransitTime = 5,
}

impl VitalCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::HeartRate,
            2 => Self::SystolicBp,
            3 => Self::RespiratoryRate,
            4 => Self::Temperature,
            5 => Self::PulseTransitTime,
            _ => return None,
        })
    }
}

/// VITALS payload: `u8 count | count x (u8 code, f32 value)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalsPayload {
    pub entries: Vec<(VitalCode, f32)>,
}

impl VitalsPayload {
    pub fn encode(&self) -> Result<Vec<u8>, DataError> {
        let n = u8::try_from(self.entries.len()).map_err(|_| DataError::Oversize { len: self.entries.len() })?;
        let mut w = Writer::new();
        w.u8(n);
        for &(c, v) in &self.entries {
            w.u8(c as u8);
            w.f32(v);
        }
        Ok(w.buf)
    }

    pub fn decode(p: &[u8]) -> Result<Self, DataError> {
        let mut r = Reader::new(p);
        let n = r.u8()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.pos();
            let code = r.u8()?;
            let code = VitalCode::from_u8(code)
                .ok_or_else(|| DataError::Payload { offset: at, msg: format!("unknown vital code {code}") })?;
            entries.push((code, r.f32()?));
        }
        if r.remaining() != 0 {
            return Err(DataError::Payload { offset: r.pos(), msg: "trailing bytes".into() });
        }
        Ok(Self { entries })
    }

    pub fn get(&self, code: VitalCode) -> Option<f32> {
        self.entries.iter().find(|e| e.0 == code).map(|e| e.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_event_is_sixteen_bytes() {
        let c = Chunk::new(ChunkType::Event, 0, vec![]).unwrap();
        let b = encode_chunk(&c).unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(&b[..12], &[4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode_chunk(&b).unwrap(), (c, 16));
    }

    #[test]
    fn oversize_rejected() {
        assert!(matches!(
            Chunk::new(ChunkType::AccFrame, 1, vec![0; 1 << 24]),
            Err(DataError::Oversize { len }) if len == 1 << 24
        ));
        assert!(Chunk::new(ChunkType::AccFrame, 1, vec![0; MAX_PAYLOAD]).is_ok());
    }

    #[test]
    fn flipped_bit_is_crc_mismatch() {
        let c = Chunk::new(ChunkType::Vitals, 99, vec![1, 2, 3, 4, 5]).unwrap();
        let mut b = encode_chunk(&c).unwrap();
        b[13] ^= 0x20;
        assert!(matches!(decode_chunk(&b), Err(DataError::CrcMismatch { offset: 17, .. })));
    }

    #[test]
    fn unknown_tag_after_valid_crc() {
        let c = Chunk::new(ChunkType::Vitals, 5, vec![9]).unwrap();
        let mut b = encode_chunk(&c).unwrap();
        b[0] = 9;
        let crc = crc32fast::hash(&b[..13]);
        b[13..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_chunk(&b), Err(DataError::UnknownTag { offset: 0, tag: 9 })));
    }

    #[test]
    fn three_chunks_in_a_stream() {
        let mut buf = Vec::new();
        for (i, k) in [ChunkType::AccFrame, ChunkType::Vitals, ChunkType::Prediction].into_iter().enumerate() {
            encode_chunk_into(&Chunk::new(k, i as u64, vec![i as u8; i * 3]).unwrap(), &mut buf).unwrap();
        }
        let s = decode_stream(&buf).unwrap();
        let offs: Vec<usize> = s.iter().map(|x| x.0).collect();
        assert_eq!(offs, vec![0, 16, 35]);
        // damage in the third chunk reports an absolute offset
        buf[40] ^= 1;
        assert!(matches!(decode_stream(&buf), Err(DataError::CrcMismatch { offset, .. }) if offset == 35 + 18));
    }

    #[test]
    fn bundle_round_trip_and_checks() {
        let b = Bundle {
            chunks: vec![
                Chunk::new(ChunkType::Event, 10, b"{}".to_vec()).unwrap(),
                Chunk::new(ChunkType::AccFrame, 20, vec![7; 40]).unwrap(),
            ],
        };
        let bytes = write_bundle(&b).unwrap();
        assert_eq!(&bytes[..4], b"ICXB");
        assert_eq!(read_bundle(&bytes).unwrap(), b);
        let mut bad = bytes.clone();
        bad[6] = 3;
        let crc = crc32fast::hash(&bad[..bad.len() - 4]);
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(read_bundle(&bad), Err(DataError::CountMismatch { declared: 3, found: 2, .. })));
        assert!(matches!(read_bundle(&bytes[..bytes.len() - 1]), Err(_)));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(read_bundle(&v), Err(DataError::Version { offset: 4, found: 2 })));
    }

    #[test]
    fn payload_codecs() {
        let a = AccFramePayload { fs: 120.0, frames: vec![[0.1, 1.0, -0.2, 0.0, 0.9, 0.05]; 3] };
        let e = a.encode().unwrap();
        assert_eq!(e.len(), 2 + 4 + 3 * 24);
        assert_eq!(AccFramePayload::decode(&e).unwrap(), a);
        assert!(AccFramePayload::decode(&e[..e.len() - 1]).is_err());
        let v = VitalsPayload { entries: vec![(VitalCode::Temperature, 37.2), (VitalCode::HeartRate, 71.0)] };
        let e = v.encode().unwrap();
        assert_eq!(VitalsPayload::decode(&e).unwrap(), v);
        assert_eq!(v.get(VitalCode::Temperature), Some(37.2));
        assert!(VitalsPayload::decode(&[1, 77, 0, 0, 0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn chunk_round_trip(tag in 1u8..=4, ts in any::<u64>(), payload in prop::collection::vec(any::<u8>(), 0..300)) {
            let c = Chunk::new(ChunkType::from_tag(tag).unwrap(), ts, payload).unwrap();
            let b = encode_chunk(&c).unwrap();
            prop_assert_eq!(b.len(), 16 + c.payload.len());
            prop_assert_eq!(decode_chunk(&b).unwrap(), (c, b.len()));
        }

        #[test]
        fn decoding_is_total(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_chunk(&bytes);
            let _ = decode_stream(&bytes);
            let _ = read_bundle(&bytes);
            let _ = AccFramePayload::decode(&bytes);
            let _ = VitalsPayload::decode(&bytes);
        }
    }
}
