//! Little-endian byte cursor and writer with offset-carrying errors.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("truncated at byte {offset}: need {need} more byte(s)")]
    Truncated { offset: usize, need: usize },
    #[error("bad magic at byte {offset}: expected {expected:?}")]
    BadMagic { offset: usize, expected: String },
    #[error("unsupported version {found} at byte {offset}")]
    Version { offset: usize, found: u16 },
    #[error("CRC mismatch at byte {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { offset: usize, stored: u32, computed: u32 },
    #[error("invariant violated at byte {offset}: {msg}")]
    Invariant { offset: usize, msg: String },
    #[error("{extra} trailing byte(s) at {offset}")]
    Trailing { offset: usize, extra: usize },
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated { offset: self.pos, need: n - self.remaining() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn i8(&mut self) -> Result<i8, FormatError> {
        Ok(self.u8()? as i8)
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u24(&mut self) -> Result<u32, FormatError> {
        let b: [u8; 3] = self.array()?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], 0]))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or(FormatError::Truncated { offset: self.pos, need: usize::MAX })?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect())
    }

    pub fn i8s(&mut self, n: usize) -> Result<Vec<i8>, FormatError> {
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }

    pub fn i32s(&mut self, n: usize) -> Result<Vec<i32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or(FormatError::Truncated { offset: self.pos, need: usize::MAX })?)?;
        Ok(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect())
    }

    pub fn magic(&mut self, m: &[u8]) -> Result<(), FormatError> {
        let at = self.pos;
        if self.take(m.len())? != m {
            return Err(FormatError::BadMagic { offset: at, expected: String::from_utf8_lossy(m).into_owned() });
        }
        Ok(())
    }

    pub fn invariant(&self, at: usize, msg: impl Into<String>) -> FormatError {
        FormatError::Invariant { offset: at, msg: msg.into() }
    }
}

/// Checks the trailing CRC32 of `buf` and returns the body without it.
pub fn split_crc(buf: &[u8]) -> Result<&[u8], FormatError> {
    if buf.len() < 4 {
        return Err(FormatError::Truncated { offset: buf.len(), need: 4 - buf.len() });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Crc { offset: body.len(), stored, computed });
    }
    Ok(body)
}

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn i8(&mut self, v: i8) {
        self.buf.push(v as u8);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u24(&mut self, v: u32) {
        debug_assert!(v < 1 << 24);
        self.bytes(&v.to_le_bytes()[..3]);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        for &x in v {
            self.f32(x);
        }
    }

    pub fn i8s(&mut self, v: &[i8]) {
        for &x in v {
            self.i8(x);
        }
    }

    pub fn i32s(&mut self, v: &[i32]) {
        for &x in v {
            self.i32(x);
        }
    }

    /// Appends the CRC32 of everything written so far and returns the bytes.
    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let c = crc32fast::hash(&self.buf);
        self.u32(c);
        self.buf
    }
}
