//! Post-training int8 quantization and integer inference for [`TcnModel`].
//!
//! Weights are per-tensor symmetric (zero point 0, scale max|w| / 127).
//! Activations are per-tensor affine over a calibrated range that always
//! contains zero, so zero and the ReLU floor are exact. Batch norm is folded
//! into the preceding convolution, biases are int32 at scale
//! `s_in * s_w`, and accumulators are rescaled to the next activation scale
//! with a 31-bit fixed-point multiplier. Rounding is half away from zero and
//! every narrowing cast saturates.
//!
//! [`TcnModel`]: crate::tcn::TcnModel

mod format;
mod model;

pub use format::{load_qmodel, qmodel_from_bytes, qmodel_to_bytes, save_qmodel, MAGIC as QMODEL_MAGIC};
pub use model::{calibrate, calibrate_channels, vital_calibration_set, QConv, QDense, QHead, QuantModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::FormatError;

/// Smallest scale handed out, used when a tensor is entirely zero.
pub const SCALE_FLOOR: f32 = 1e-8;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Tcn(#[from] crate::tcn::TcnError),
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Affine map between int8 codes and reals: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub scale: f32,
    pub zero_point: i8,
}

impl QParams {
    /// Symmetric parameters covering `[-amax, amax]`.
    pub fn symmetric(amax: f64) -> Self {
        let scale = if amax > 0.0 { (amax / 127.0) as f32 } else { SCALE_FLOOR };
        Self { scale: scale.max(SCALE_FLOOR), zero_point: 0 }
    }

    /// Affine parameters covering `[lo, hi]` widened to include 0. The zero
    /// point is rounded first and the scale then grown just enough that
    /// neither end clips.
    pub fn affine(lo: f64, hi: f64) -> Self {
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        if hi - lo <= 0.0 {
            return Self { scale: SCALE_FLOOR, zero_point: -128 };
        }
        let s0 = (hi - lo) / 255.0;
        let zp = (-128.0 - lo / s0).round().clamp(-128.0, 127.0);
        let mut s = s0;
        if hi > 0.0 {
            s = s.max(hi / (127.0 - zp));
        }
        if lo < 0.0 {
            s = s.max(lo / (-128.0 - zp));
        }
        Self { scale: (s as f32).max(SCALE_FLOOR), zero_point: zp as i8 }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        sat_i8((x / self.scale as f64).round() + self.zero_point as f64)
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        self.scale as f64 * (q as i32 - self.zero_point as i32) as f64
    }
}

pub(crate) fn sat_i8(v: f64) -> i8 {
    v.clamp(-128.0, 127.0) as i8
}

pub(crate) fn sat_i32(v: i64) -> i32 {
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub values: Vec<i8>,
    pub scale: f32,
    pub zero_point: i8,
}

impl QuantTensor {
    pub fn params(&self) -> QParams {
        QParams { scale: self.scale, zero_point: self.zero_point }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let p = self.params();
        self.values.iter().map(|&q| p.dequantize(q)).collect()
    }
}

/// Symmetric (weights) or min/max affine (activations) quantization.
pub fn quantize_tensor(x: &[f32], symmetric: bool) -> Result<QuantTensor, QuantError> {
    quantize_tensor_f64(&x.iter().map(|&v| v as f64).collect::<Vec<_>>(), symmetric)
}

pub fn quantize_tensor_f64(x: &[f64], symmetric: bool) -> Result<QuantTensor, QuantError> {
    if x.is_empty() {
        return Err(QuantError::Parameter("cannot quantize an empty tensor".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(QuantError::Parameter("non-finite value in tensor".into()));
    }
    let p = if symmetric {
        QParams::symmetric(x.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    } else {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        QParams::affine(lo, hi)
    };
    Ok(QuantTensor { values: x.iter().map(|&v| p.quantize(v)).collect(), scale: p.scale, zero_point: p.zero_point })
}

/// Real multiplier `m * 2^-(31 + shift)` with `m` in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMultiplier {
    pub m: i32,
    pub shift: i32,
}

impl FixedMultiplier {
    pub fn from_real(r: f64) -> Result<Self, QuantError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(QuantError::Parameter(format!("requantization multiplier {r} must be positive")));
        }
        let mut shift = 0i32;
        let mut f = r;
        while f >= 1.0 {
            f /= 2.0;
            shift -= 1;
        }
        while f < 0.5 {
            f *= 2.0;
            shift += 1;
        }
        let mut m = (f * (1u64 << 31) as f64).round() as i64;
        if m == 1 << 31 {
            m /= 2;
            shift -= 1;
        }
        // beyond 62 bits of shift every accumulator maps to 0
        if 31 + shift > 62 {
            return Ok(Self { m: 0, shift: 31 });
        }
        Ok(Self { m: m as i32, shift })
    }

    pub fn as_real(&self) -> f64 {
        self.m as f64 * 2f64.powi(-(31 + self.shift))
    }

    /// `round(acc * multiplier)`, halves away from zero.
    pub fn apply(&self, acc: i32) -> i64 {
        let prod = acc as i64 * self.m as i64;
        let total = 31 + self.shift;
        if total <= 0 {
            return prod.saturating_mul(1i64 << (-total).min(62));
        }
        let half = 1i64 << (total - 1);
        if prod >= 0 {
            (prod + half) >> total
        } else {
            -((-prod + half) >> total)
        }
    }
}
