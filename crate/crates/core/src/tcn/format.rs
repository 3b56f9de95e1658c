//! `TCNM` model file.
//!
//! ```text
//! "TCNM" u16 version u8 n_heads u16 input_len
//! per head:  u8 n_layers
//!            per layer: u16 in_ch u16 out_ch u8 kernel u16 dilation
//!                       f32 weight[out][in][k] f32 bias[out]
//!                       f32 gamma[out] beta[out] mean[out] var[out]
//!            dense
//! final dense
//! u32 CRC32 of everything before it
//! dense: u16 in u16 out f32 weight[out][in] f32 bias[out]
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use super::{BatchNorm, Conv1d, Dense, TcnError, TcnHead, TcnLayer, TcnModel};
use crate::binio::{split_crc, FormatError, Reader, Writer};

pub const MAGIC: &[u8; 4] = b"TCNM";
pub const VERSION: u16 = 1;

pub(crate) fn u16_of(v: usize, what: &str) -> Result<u16, TcnError> {
    u16::try_from(v).map_err(|_| TcnError::Invariant(format!("{what} {v} does not fit in u16")))
}

pub(crate) fn write_dense(w: &mut Writer, d: &Dense) -> Result<(), TcnError> {
    w.u16(u16_of(d.in_dim, "dense input")?);
    w.u16(u16_of(d.out_dim, "dense output")?);
    w.f32s(&d.weight);
    w.f32s(&d.bias);
    Ok(())
}

pub(crate) fn read_dense(r: &mut Reader) -> Result<Dense, FormatError> {
    let in_dim = r.u16()? as usize;
    let out_dim = r.u16()? as usize;
    Ok(Dense { in_dim, out_dim, weight: r.f32s(in_dim * out_dim)?, bias: r.f32s(out_dim)? })
}

/// Layer header fields shared with the quantized format.
pub(crate) struct LayerShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

pub(crate) fn read_layer_shape(r: &mut Reader, expect_kernel: usize) -> Result<LayerShape, FormatError> {
    let in_ch = r.u16()? as usize;
    let out_ch = r.u16()? as usize;
    let at = r.pos();
    let kernel = r.u8()? as usize;
    if kernel != expect_kernel {
        return Err(r.invariant(at, format!("kernel {kernel}, expected {expect_kernel}")));
    }
    let at = r.pos();
    let dilation = r.u16()? as usize;
    if dilation == 0 {
        return Err(r.invariant(at, "dilation 0"));
    }
    Ok(LayerShape { in_ch, out_ch, kernel, dilation })
}

pub(crate) fn write_layer_shape(w: &mut Writer, c: &Conv1d) -> Result<(), TcnError> {
    w.u16(u16_of(c.in_ch, "in_ch")?);
    w.u16(u16_of(c.out_ch, "out_ch")?);
    w.u8(u8::try_from(c.kernel).map_err(|_| TcnError::Invariant("kernel too large".into()))?);
    w.u16(u16_of(c.dilation, "dilation")?);
    Ok(())
}

/// Reads the common header; returns (n_heads, input_len).
pub(crate) fn read_header(r: &mut Reader, magic: &[u8; 4], version: u16) -> Result<(usize, usize), FormatError> {
    r.magic(magic)?;
    let at = r.pos();
    let v = r.u16()?;
    if v != version {
        return Err(FormatError::Version { offset: at, found: v });
    }
    Ok((r.u8()? as usize, r.u16()? as usize))
}

pub fn model_to_bytes(m: &TcnModel) -> Result<Vec<u8>, TcnError> {
    m.validate()?;
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u8(u8::try_from(m.heads.len()).map_err(|_| TcnError::Invariant("too many heads".into()))?);
    w.u16(u16_of(m.input_len, "input_len")?);
    for h in &m.heads {
        w.u8(h.layers.len() as u8);
        for l in &h.layers {
            write_layer_shape(&mut w, &l.conv)?;
            w.f32s(&l.conv.weight);
            w.f32s(&l.conv.bias);
            for v in [&l.bn.gamma, &l.bn.beta, &l.bn.mean, &l.bn.var] {
                w.f32s(v);
            }
        }
        write_dense(&mut w, &h.dense)?;
    }
    write_dense(&mut w, &m.final_dense)?;
    Ok(w.finish_with_crc())
}

pub fn model_from_bytes(buf: &[u8]) -> Result<TcnModel, TcnError> {
    // header first so a wrong file type is reported as such, not as a CRC error
    read_header(&mut Reader::new(buf), MAGIC, VERSION)?;
    let body = split_crc(buf)?;
    let mut r = Reader::new(body);
    let (n_heads, input_len) = read_header(&mut r, MAGIC, VERSION)?;
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let n_layers = r.u8()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let s = read_layer_shape(&mut r, super::KERNEL)?;
            let weight = r.f32s(s.out_ch * s.in_ch * s.kernel)?;
            let bias = r.f32s(s.out_ch)?;
            let gamma = r.f32s(s.out_ch)?;
            let beta = r.f32s(s.out_ch)?;
            let mean = r.f32s(s.out_ch)?;
            let var = r.f32s(s.out_ch)?;
            layers.push(TcnLayer {
                conv: Conv1d { in_ch: s.in_ch, out_ch: s.out_ch, kernel: s.kernel, dilation: s.dilation, weight, bias },
                bn: BatchNorm { gamma, beta, mean, var },
            });
        }
        heads.push(TcnHead { layers, dense: read_dense(&mut r)? });
    }
    let final_dense = read_dense(&mut r)?;
    if r.remaining() > 0 {
        return Err(FormatError::Trailing { offset: r.pos(), extra: r.remaining() }.into());
    }
    TcnModel::new(heads, final_dense, input_len)
}

pub fn save_model(m: &TcnModel, path: &Path) -> Result<(), TcnError> {
    std::fs::write(path, model_to_bytes(m)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TcnModel, TcnError> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcn::INPUT_LEN;

    #[test]
    fn round_trip_is_bit_identical() {
        let m = TcnModel::random(4, INPUT_LEN, 77).unwrap();
        let b = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&b).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_bytes(&back).unwrap(), b);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tcnm");
        let m = crate::tcn::threshold_demo(INPUT_LEN).unwrap();
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn truncation_is_rejected() {
        let b = model_to_bytes(&TcnModel::random(1, INPUT_LEN, 1).unwrap()).unwrap();
        for cut in [0, 3, 6, 9, 100, b.len() / 2, b.len() - 1] {
            assert!(model_from_bytes(&b[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut b = model_to_bytes(&TcnModel::zeros(1, INPUT_LEN).unwrap()).unwrap();
        b[4] = 2;
        assert!(matches!(model_from_bytes(&b), Err(TcnError::Format(FormatError::Version { offset: 4, found: 2 }))));
        b[0] = b'X';
        assert!(matches!(model_from_bytes(&b), Err(TcnError::Format(FormatError::BadMagic { offset: 0, .. }))));
    }

    #[test]
    fn kernel_other_than_three_is_an_invariant_error() {
        let b = model_to_bytes(&TcnModel::zeros(1, INPUT_LEN).unwrap()).unwrap();
        // header 9 bytes, n_layers 1, in_ch 2, out_ch 2, then the kernel byte
        let k_at = 9 + 1 + 4;
        assert_eq!(b[k_at], 3);
        let mut body = b[..b.len() - 4].to_vec();
        body[k_at] = 5;
        let mut w = Writer::new();
        w.bytes(&body);
        let bad = w.finish_with_crc();
        match model_from_bytes(&bad) {
            Err(TcnError::Format(FormatError::Invariant { offset, .. })) => assert_eq!(offset, k_at),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flipped_payload_bit_fails_crc() {
        let mut b = model_to_bytes(&TcnModel::zeros(1, INPUT_LEN).unwrap()).unwrap();
        b[40] ^= 0x10;
        assert!(matches!(model_from_bytes(&b), Err(TcnError::Format(FormatError::Crc { .. }))));
    }
}
