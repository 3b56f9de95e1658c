//! `TCNQ` quantized model file.
//!
//! ```text
//! "TCNQ" u16 version u8 n_heads u16 input_len
//! qparams concat
//! per head:  qparams input
//!            u8 n_layers
//!            per layer: u16 in_ch u16 out_ch u8 kernel u16 dilation
//!                       tensor weight i32 bias[out] qparams output
//!            qdense
//! qdense final
//! u32 CRC32 of everything before it
//! qparams: f32 scale i8 zero_point
//! tensor:  qparams, i8 values
//! qdense:  u16 in u16 out tensor weight i32 bias[out]
//! ```
//! Requantization multipliers are not stored; they follow from the scales.

use std::path::Path;

use super::model::{QConv, QDense, QHead, QuantModel};
use super::{FixedMultiplier, QParams, QuantError, QuantTensor};
use crate::binio::{split_crc, FormatError, Reader, Writer};
use crate::tcn::format::{read_header, read_layer_shape, u16_of};

pub const MAGIC: &[u8; 4] = b"TCNQ";
pub const VERSION: u16 = 1;

fn write_qparams(w: &mut Writer, p: QParams) {
    w.f32(p.scale);
    w.i8(p.zero_point);
}

fn read_qparams(r: &mut Reader) -> Result<QParams, FormatError> {
    let at = r.pos();
    let scale = r.f32()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(r.invariant(at, format!("scale {scale} must be positive")));
    }
    Ok(QParams { scale, zero_point: r.i8()? })
}

fn read_tensor(r: &mut Reader, n: usize) -> Result<QuantTensor, FormatError> {
    let p = read_qparams(r)?;
    Ok(QuantTensor { values: r.i8s(n)?, scale: p.scale, zero_point: p.zero_point })
}

fn write_dense(w: &mut Writer, d: &QDense) -> Result<(), QuantError> {
    w.u16(u16_of(d.in_dim, "dense input")?);
    w.u16(u16_of(d.out_dim, "dense output")?);
    write_qparams(w, d.weight.params());
    w.i8s(&d.weight.values);
    w.i32s(&d.bias);
    Ok(())
}

fn read_dense(r: &mut Reader, input: QParams) -> Result<QDense, FormatError> {
    let in_dim = r.u16()? as usize;
    let out_dim = r.u16()? as usize;
    let weight = read_tensor(r, in_dim * out_dim)?;
    Ok(QDense { in_dim, out_dim, weight, bias: r.i32s(out_dim)?, input })
}

fn multiplier(at: usize, r: f64) -> Result<FixedMultiplier, QuantError> {
    FixedMultiplier::from_real(r).map_err(|e| FormatError::Invariant { offset: at, msg: e.to_string() }.into())
}

pub fn qmodel_to_bytes(m: &QuantModel) -> Result<Vec<u8>, QuantError> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u8(u8::try_from(m.heads.len()).map_err(|_| QuantError::Parameter("too many heads".into()))?);
    w.u16(u16_of(m.input_len, "input_len")?);
    write_qparams(&mut w, m.concat);
    for h in &m.heads {
        write_qparams(&mut w, h.input());
        w.u8(h.layers.len() as u8);
        for l in &h.layers {
            w.u16(u16_of(l.in_ch, "in_ch")?);
            w.u16(u16_of(l.out_ch, "out_ch")?);
            w.u8(l.kernel as u8);
            w.u16(u16_of(l.dilation, "dilation")?);
            write_qparams(&mut w, l.weight.params());
            w.i8s(&l.weight.values);
            w.i32s(&l.bias);
            write_qparams(&mut w, l.output);
        }
        write_dense(&mut w, &h.dense)?;
    }
    write_dense(&mut w, &m.final_dense)?;
    Ok(w.finish_with_crc())
}

pub fn qmodel_from_bytes(buf: &[u8]) -> Result<QuantModel, QuantError> {
    read_header(&mut Reader::new(buf), MAGIC, VERSION)?;
    let body = split_crc(buf)?;
    let mut r = Reader::new(body);
    let (n_heads, input_len) = read_header(&mut r, MAGIC, VERSION)?;
    let concat = read_qparams(&mut r)?;
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let mut input = read_qparams(&mut r)?;
        let n_layers = r.u8()? as usize;
        if n_layers == 0 {
            return Err(r.invariant(r.pos() - 1, "head without layers").into());
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut in_ch = 1;
        for _ in 0..n_layers {
            let at = r.pos();
            let s = read_layer_shape(&mut r, crate::tcn::KERNEL)?;
            if s.in_ch != in_ch {
                return Err(r.invariant(at, format!("in_ch {} after {} channels", s.in_ch, in_ch)).into());
            }
            in_ch = s.out_ch;
            let weight = read_tensor(&mut r, s.out_ch * s.in_ch * s.kernel)?;
            let bias = r.i32s(s.out_ch)?;
            let at = r.pos();
            let output = read_qparams(&mut r)?;
            let requant = multiplier(at, input.scale as f64 * weight.scale as f64 / output.scale as f64)?;
            layers.push(QConv {
                in_ch: s.in_ch,
                out_ch: s.out_ch,
                kernel: s.kernel,
                dilation: s.dilation,
                weight,
                bias,
                input,
                output,
                requant,
            });
            input = output;
        }
        let at = r.pos();
        let dense = read_dense(&mut r, input)?;
        let requant = multiplier(at, dense.acc_scale() / concat.scale as f64)?;
        heads.push(QHead { layers, dense, requant });
    }
    let at = r.pos();
    let final_dense = read_dense(&mut r, concat)?;
    if final_dense.out_dim != 1 || final_dense.in_dim != heads.iter().map(|h| h.dense.out_dim).sum::<usize>() {
        return Err(r.invariant(at, "final dense shape").into());
    }
    if r.remaining() > 0 {
        return Err(FormatError::Trailing { offset: r.pos(), extra: r.remaining() }.into());
    }
    Ok(QuantModel { heads, concat, final_dense, input_len })
}

pub fn save_qmodel(m: &QuantModel, path: &Path) -> Result<(), QuantError> {
    std::fs::write(path, qmodel_to_bytes(m)?)?;
    Ok(())
}

pub fn load_qmodel(path: &Path) -> Result<QuantModel, QuantError> {
    qmodel_from_bytes(&std::fs::read(path)?)
}
