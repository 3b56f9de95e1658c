use serde::{Deserialize, Serialize};

use super::{quantize_tensor_f64, sat_i32, sat_i8, FixedMultiplier, QParams, QuantError, QuantTensor};
use crate::tcn::{sigmoid, Dense, TcnError, TcnModel, VitalSeries};

/// Convolution with batch norm folded in, followed by ReLU and max-pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QConv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: QuantTensor,
    pub bias: Vec<i32>,
    pub input: QParams,
    pub output: QParams,
    pub requant: FixedMultiplier,
}

impl QConv {
    fn build(
        conv: &crate::tcn::Conv1d,
        bn: &crate::tcn::BatchNorm,
        input: QParams,
        output: QParams,
    ) -> Result<Self, QuantError> {
        let aff = bn.affine();
        let per = conv.in_ch * conv.kernel;
        let folded: Vec<f64> = conv.weight.iter().enumerate().map(|(i, &w)| aff[i / per].0 * w as f64).collect();
        let weight = quantize_tensor_f64(&folded, true)?;
        let acc_scale = input.scale as f64 * weight.scale as f64;
        let bias = (0..conv.out_ch)
            .map(|o| {
                let b = aff[o].0 * conv.bias[o] as f64 + aff[o].1;
                sat_i32((b / acc_scale).round().clamp(i64::MIN as f64, i64::MAX as f64) as i64)
            })
            .collect();
        Ok(Self {
            in_ch: conv.in_ch,
            out_ch: conv.out_ch,
            kernel: conv.kernel,
            dilation: conv.dilation,
            weight,
            bias,
            input,
            output,
            requant: FixedMultiplier::from_real(acc_scale / output.scale as f64)?,
        })
    }

    /// Integer block: convolution, requantization, ReLU, max-pool of 2.
    /// `x` is channel-major with `len` steps per channel.
    pub fn forward(&self, x: &[i8], len: usize) -> Vec<i8> {
        let zp_in = self.input.zero_point as i32;
        let zp_out = self.output.zero_point as i64;
        let w = &self.weight.values;
        let mut acc = vec![0i64; len];
        let half = len / 2;
        let mut out = Vec::with_capacity(self.out_ch * half);
        let mut act = vec![0i8; len];
        let centered: Vec<i64> = x.iter().map(|&v| (v as i32 - zp_in) as i64).collect();
        for o in 0..self.out_ch {
            acc.fill(self.bias[o] as i64);
            for i in 0..self.in_ch {
                let xi = &centered[i * len..(i + 1) * len];
                for j in 0..self.kernel {
                    let wv = w[(o * self.in_ch + i) * self.kernel + j] as i64;
                    // zero padding is the input zero point, which adds nothing
                    let back = (self.kernel - 1 - j) * self.dilation;
                    if wv == 0 || back >= len {
                        continue;
                    }
                    for (a, &v) in acc[back..].iter_mut().zip(&xi[..len - back]) {
                        *a += wv * v;
                    }
                }
            }
            for t in 0..len {
                let q = zp_out + self.requant.apply(sat_i32(acc[t]));
                act[t] = sat_i8(q.max(zp_out) as f64);
            }
            out.extend((0..half).map(|t| act[2 * t].max(act[2 * t + 1])));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: QuantTensor,
    pub bias: Vec<i32>,
    pub input: QParams,
}

impl QDense {
    fn build(d: &Dense, input: QParams) -> Result<Self, QuantError> {
        let weight = quantize_tensor_f64(&d.weight.iter().map(|&w| w as f64).collect::<Vec<_>>(), true)?;
        let acc_scale = input.scale as f64 * weight.scale as f64;
        let bias = d.bias.iter().map(|&b| sat_i32((b as f64 / acc_scale).round() as i64)).collect();
        Ok(Self { in_dim: d.in_dim, out_dim: d.out_dim, weight, bias, input })
    }

    pub fn acc_scale(&self) -> f64 {
        self.input.scale as f64 * self.weight.scale as f64
    }

    /// int32 accumulators at scale `acc_scale`.
    pub fn accumulate(&self, x: &[i8]) -> Vec<i32> {
        let zp = self.input.zero_point as i32;
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight.values[o * self.in_dim..(o + 1) * self.in_dim];
                let s: i64 = row.iter().zip(x).map(|(&w, &v)| w as i64 * (v as i32 - zp) as i64).sum();
                sat_i32(s + self.bias[o] as i64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QHead {
    pub layers: Vec<QConv>,
    pub dense: QDense,
    pub requant: FixedMultiplier,
}

impl QHead {
    pub fn input(&self) -> QParams {
        self.layers[0].input
    }

    /// Head features quantized with the shared concatenation parameters.
    fn forward(&self, x: &[f32], concat: QParams) -> Vec<i8> {
        let inp = self.input();
        let mut h: Vec<i8> = x.iter().map(|&v| inp.quantize(v as f64)).collect();
        let mut len = x.len();
        for l in &self.layers {
            h = l.forward(&h, len);
            len /= 2;
        }
        let zp = concat.zero_point as i64;
        self.dense.accumulate(&h).into_iter().map(|a| sat_i8((zp + self.requant.apply(a)) as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantModel {
    pub heads: Vec<QHead>,
    /// Shared parameters of the concatenated head features.
    pub concat: QParams,
    pub final_dense: QDense,
    pub input_len: usize,
}

impl QuantModel {
    /// Sepsis logit from the int32 accumulator of the final unit.
    pub fn logit_channels(&self, x: &[Vec<f32>]) -> Result<f64, QuantError> {
        if x.len() != self.heads.len() || x.iter().any(|c| c.len() != self.input_len) {
            return Err(TcnError::Shape(format!("expected {} channels of {}", self.heads.len(), self.input_len)).into());
        }
        let mut f = Vec::with_capacity(self.final_dense.in_dim);
        for (h, c) in self.heads.iter().zip(x) {
            f.extend(h.forward(c, self.concat));
        }
        Ok(self.final_dense.accumulate(&f)[0] as f64 * self.final_dense.acc_scale())
    }

    pub fn qforward_channels(&self, x: &[Vec<f32>]) -> Result<f64, QuantError> {
        Ok(sigmoid(self.logit_channels(x)?))
    }

    pub fn qforward(&self, v: &VitalSeries) -> Result<f64, QuantError> {
        self.qforward_channels(&v.window()?)
    }

    /// Bytes of int8 convolution and dense weights.
    pub fn weight_bytes(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.layers.iter().map(|l| l.weight.values.len()).sum::<usize>() + h.dense.weight.values.len())
            .sum::<usize>()
            + self.final_dense.weight.values.len()
    }
}

#[derive(Clone, Copy)]
struct Range(f64, f64);

impl Range {
    fn empty() -> Self {
        Range(f64::INFINITY, f64::NEG_INFINITY)
    }

    fn add(&mut self, xs: impl IntoIterator<Item = f32>) {
        for v in xs {
            self.0 = self.0.min(v as f64);
            self.1 = self.1.max(v as f64);
        }
    }

    fn params(self) -> QParams {
        QParams::affine(self.0, self.1)
    }
}

/// Seeded vital windows for calibration: each channel drifts linearly from
/// its nominal value by a random offset, with 2% multiplicative noise.
pub fn vital_calibration_set(n: usize, input_len: usize, seed: u64) -> Vec<Vec<Vec<f32>>> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    let nominal = crate::pipeline::NOMINAL_VITALS;
    let span = [(-15.0, 45.0), (-35.0, 15.0), (-4.0, 10.0), (-0.5, 2.0)];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            nominal
                .iter()
                .zip(span)
                .map(|(&m, (lo, hi))| {
                    let shift: f64 = rng.random_range(lo..hi);
                    (0..input_len)
                        .map(|t| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (m + shift * t as f64 / input_len as f64 + 0.02 * m * z) as f32
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Calibrates activation ranges on full buffers.
pub fn calibrate(model: &TcnModel, samples: &[VitalSeries]) -> Result<QuantModel, QuantError> {
    let xs: Vec<Vec<Vec<f32>>> = samples.iter().map(|s| s.window()).collect::<Result<_, _>>()?;
    calibrate_channels(model, &xs)
}

/// Runs the float model on every sample, records min/max of each head input,
/// each block output and the head features, and freezes int8 parameters.
pub fn calibrate_channels(model: &TcnModel, samples: &[Vec<Vec<f32>>]) -> Result<QuantModel, QuantError> {
    if samples.is_empty() {
        return Err(QuantError::Parameter("empty calibration set".into()));
    }
    model.validate()?;
    let nh = model.heads.len();
    let nl = model.heads[0].layers.len();
    let mut inputs = vec![Range::empty(); nh];
    let mut acts = vec![vec![Range::empty(); nl]; nh];
    let mut feats = Range::empty();
    for x in samples {
        if x.len() != nh || x.iter().any(|c| c.len() != model.input_len) {
            return Err(TcnError::Shape("calibration sample shape".into()).into());
        }
        for (h, head) in model.heads.iter().enumerate() {
            inputs[h].add(x[h].iter().copied());
            let trace = head.trace(&x[h])?;
            for (l, b) in trace.iter().enumerate() {
                acts[h][l].add(b.activated.data.iter().copied());
            }
            let last = &trace.last().expect("validated layers").pooled;
            feats.add(head.dense.forward(&last.data)?);
        }
    }
    let concat = feats.params();
    let mut heads = Vec::with_capacity(nh);
    for (h, head) in model.heads.iter().enumerate() {
        let mut input = inputs[h].params();
        let mut layers = Vec::with_capacity(nl);
        for (l, layer) in head.layers.iter().enumerate() {
            let output = acts[h][l].params();
            layers.push(QConv::build(&layer.conv, &layer.bn, input, output)?);
            input = output;
        }
        let dense = QDense::build(&head.dense, input)?;
        let requant = FixedMultiplier::from_real(dense.acc_scale() / concat.scale as f64)?;
        heads.push(QHead { layers, dense, requant });
    }
    Ok(QuantModel {
        heads,
        concat,
        final_dense: QDense::build(&model.final_dense, concat)?,
        input_len: model.input_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcn::{threshold_demo, INPUT_LEN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn inputs(n: usize, seed: u64) -> Vec<Vec<Vec<f32>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0f32, 1.0).unwrap();
        (0..n).map(|_| (0..4).map(|_| (0..INPUT_LEN).map(|_| g.sample(&mut rng)).collect()).collect()).collect()
    }

    #[test]
    fn zero_model_is_exactly_half() {
        let m = TcnModel::zeros(4, INPUT_LEN).unwrap();
        let q = calibrate_channels(&m, &inputs(2, 0)).unwrap();
        assert!(q.heads[0].layers.iter().all(|l| l.weight.scale == super::super::SCALE_FLOOR));
        assert_eq!(q.qforward_channels(&inputs(1, 1)[0]).unwrap(), 0.5);
    }

    #[test]
    fn calibration_is_deterministic() {
        let m = TcnModel::random(4, INPUT_LEN, 3).unwrap();
        let cal = inputs(4, 5);
        assert_eq!(calibrate_channels(&m, &cal).unwrap(), calibrate_channels(&m, &cal).unwrap());
        assert!(calibrate_channels(&m, &[]).is_err());
    }

    #[test]
    fn weight_payload_is_a_quarter() {
        let m = TcnModel::random(4, INPUT_LEN, 3).unwrap();
        let q = calibrate_channels(&m, &inputs(1, 5)).unwrap();
        assert_eq!(q.weight_bytes() * 4, m.weight_bytes());
    }

    #[test]
    fn tracks_float_model() {
        let m = TcnModel::random(4, INPUT_LEN, 21).unwrap();
        let q = calibrate_channels(&m, &inputs(16, 22)).unwrap();
        let mut worst: f64 = 0.0;
        let mut total = 0.0;
        let test = inputs(30, 23);
        for x in &test {
            let d = (m.forward_channels(x).unwrap() - q.qforward_channels(x).unwrap()).abs();
            worst = worst.max(d);
            total += d;
        }
        let mean = total / test.len() as f64;
        assert!(mean < 0.05 && worst < 0.15, "mean {mean} max {worst}");
    }

    #[test]
    fn demo_model_keeps_its_decision() {
        let m = threshold_demo(INPUT_LEN).unwrap();
        let c = |v: [f32; 4]| v.iter().map(|&x| vec![x; INPUT_LEN]).collect::<Vec<_>>();
        let cal = vec![c([75.0, 120.0, 15.0, 37.0]), c([120.0, 85.0, 28.0, 39.0]), c([55.0, 140.0, 10.0, 36.2])];
        let q = calibrate_channels(&m, &cal).unwrap();
        for x in &cal {
            let (pf, pq) = (m.forward_channels(x).unwrap(), q.qforward_channels(x).unwrap());
            assert_eq!(pf > 0.5, pq > 0.5);
            assert!((pf - pq).abs() < 0.05, "{pf} vs {pq}");
        }
    }
}
