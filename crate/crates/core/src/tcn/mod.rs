//! Multi-head temporal convolutional network in float precision.
//!
//! One head per vital channel. A head is four blocks of causal dilated
//! convolution (kernel 3, dilations 1, 2, 4, 8, 32 filters), batch norm,
//! ReLU and max-pool (2, stride 2), so a 480-sample channel shrinks to
//! 240, 120, 60 and finally 30 steps. The 30 x 32 map is flattened
//! channel-major and fed to a 32-unit dense layer. The head outputs are
//! concatenated into one dense unit followed by a sigmoid.
//!
//! Receptive field of one element of the last pooled map, walking from the
//! input: start at 1 with input stride 1; a convolution adds
//! (k - 1) * d * stride; a pool of size 2 adds stride and then doubles it.
//! Without pooling this reduces to 1 + (k - 1) * sum(d).

pub(crate) mod format;
mod presets;
mod series;

pub use format::{load_model, model_from_bytes, model_to_bytes, save_model, MAGIC as MODEL_MAGIC};
pub use presets::{threshold_demo, NominalRange, DEMO_BIAS, DEMO_NOMINALS};
pub use series::VitalSeries;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::binio::FormatError;

pub const KERNEL: usize = 3;
pub const FILTERS: usize = 32;
pub const N_LAYERS: usize = 4;
pub const INPUT_LEN: usize = 480;
pub const HEAD_FEATURES: usize = 32;
pub const BN_EPS: f64 = 1e-5;
/// Vital channels in head order.
pub const CHANNELS: [&str; 4] = ["HR", "SBP", "RR", "TEMP"];

#[derive(Debug, Error)]
pub enum TcnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("buffer not ready: {filled} of {needed} samples")]
    NotReady { filled: usize, needed: usize },
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Channel-major activations: `data[c * len + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, len: usize, data: Vec<f32>) -> Result<Self, TcnError> {
        if data.len() != channels * len {
            return Err(TcnError::Shape(format!("{} values for {channels} x {len}", data.len())));
        }
        Ok(Self { channels, len, data })
    }

    pub fn from_signal(x: &[f32]) -> Self {
        Self { channels: 1, len: x.len(), data: x.to_vec() }
    }

    pub fn at(&self, c: usize, t: usize) -> f32 {
        self.data[c * self.len + t]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    /// Max over non-overlapping pairs; an odd trailing sample is dropped.
    pub fn max_pool2(&self) -> Self {
        let len = self.len / 2;
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            let x = self.channel(c);
            data.extend((0..len).map(|t| x[2 * t].max(x[2 * t + 1])));
        }
        Self { channels: self.channels, len, data }
    }

    pub fn relu(&mut self) {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
    }
}

/// Causal dilated 1-D convolution. Weights are `[out][in][k]`; tap `k - 1`
/// sees the current sample, tap `j` sees `(k - 1 - j) * dilation` samples
/// back, and samples before the start read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv1d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        Self { in_ch, out_ch, kernel, dilation, weight: vec![0.0; out_ch * in_ch * kernel], bias: vec![0.0; out_ch] }
    }

    pub fn w(&self, o: usize, i: usize, j: usize) -> f32 {
        self.weight[(o * self.in_ch + i) * self.kernel + j]
    }

    pub fn w_mut(&mut self, o: usize, i: usize, j: usize) -> &mut f32 {
        &mut self.weight[(o * self.in_ch + i) * self.kernel + j]
    }

    fn check(&self) -> Result<(), TcnError> {
        if self.weight.len() != self.out_ch * self.in_ch * self.kernel || self.bias.len() != self.out_ch {
            return Err(TcnError::Shape("conv weight or bias length".into()));
        }
        if self.kernel == 0 || self.dilation == 0 {
            return Err(TcnError::Invariant("kernel and dilation must be positive".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap, TcnError> {
        if x.channels != self.in_ch {
            return Err(TcnError::Shape(format!("conv expects {} channels, got {}", self.in_ch, x.channels)));
        }
        let n = x.len;
        let mut acc = vec![0f64; n];
        let mut out = Vec::with_capacity(self.out_ch * n);
        for o in 0..self.out_ch {
            acc.fill(self.bias[o] as f64);
            for i in 0..self.in_ch {
                let xi = x.channel(i);
                for j in 0..self.kernel {
                    let w = self.w(o, i, j) as f64;
                    if w == 0.0 {
                        continue;
                    }
                    let back = (self.kernel - 1 - j) * self.dilation;
                    for t in back..n {
                        acc[t] += w * xi[t - back] as f64;
                    }
                }
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
        Ok(FeatureMap { channels: self.out_ch, len: n, data: out })
    }
}

/// Inference-form batch norm: `gamma * (x - mean) / sqrt(var + eps) + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNorm {
    /// Passes values through unchanged: var is set so that var + eps = 1.
    pub fn identity(n: usize) -> Self {
        Self { gamma: vec![1.0; n], beta: vec![0.0; n], mean: vec![0.0; n], var: vec![(1.0 - BN_EPS) as f32; n] }
    }

    /// Per-channel (a, b) with y = a * x + b.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.gamma.len())
            .map(|c| {
                let a = self.gamma[c] as f64 / (self.var[c] as f64 + BN_EPS).sqrt();
                (a, self.beta[c] as f64 - a * self.mean[c] as f64)
            })
            .collect()
    }

    pub fn apply(&self, x: &mut FeatureMap) {
        for (c, (a, b)) in self.affine().into_iter().enumerate() {
            for v in &mut x.data[c * x.len..(c + 1) * x.len] {
                *v = (a * *v as f64 + b) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnLayer {
    pub conv: Conv1d,
    pub bn: BatchNorm,
}

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn check(&self) -> Result<(), TcnError> {
        if self.weight.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(TcnError::Shape("dense weight or bias length".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>, TcnError> {
        if x.len() != self.in_dim {
            return Err(TcnError::Shape(format!("dense expects {} inputs, got {}", self.in_dim, x.len())));
        }
        Ok((0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let s: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
                (s + self.bias[o] as f64) as f32
            })
            .collect())
    }
}

/// Intermediate maps of one block, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    /// After convolution, batch norm and ReLU.
    pub activated: FeatureMap,
    pub pooled: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnHead {
    pub layers: Vec<TcnLayer>,
    pub dense: Dense,
}

impl TcnHead {
    fn validate(&self, input_len: usize) -> Result<(), TcnError> {
        if self.layers.len() != N_LAYERS {
            return Err(TcnError::Invariant(format!("{} layers, expected {N_LAYERS}", self.layers.len())));
        }
        let mut in_ch = 1;
        let mut len = input_len;
        for (l, layer) in self.layers.iter().enumerate() {
            let c = &layer.conv;
            c.check()?;
            if c.kernel != KERNEL {
                return Err(TcnError::Invariant(format!("layer {l}: kernel {} != {KERNEL}", c.kernel)));
            }
            if c.dilation != 1 << l {
                return Err(TcnError::Invariant(format!("layer {l}: dilation {} != {}", c.dilation, 1 << l)));
            }
            if c.out_ch != FILTERS || c.in_ch != in_ch {
                return Err(TcnError::Invariant(format!("layer {l}: channels {} -> {}", c.in_ch, c.out_ch)));
            }
            let bn = &layer.bn;
            if [&bn.gamma, &bn.beta, &bn.mean, &bn.var].iter().any(|v| v.len() != FILTERS) {
                return Err(TcnError::Shape(format!("layer {l}: batch-norm length")));
            }
            if bn.var.iter().any(|&v| !(v > 0.0)) {
                return Err(TcnError::Invariant(format!("layer {l}: batch-norm variance must be > 0")));
            }
            in_ch = FILTERS;
            len /= 2;
        }
        self.dense.check()?;
        if self.dense.in_dim != FILTERS * len || self.dense.out_dim != HEAD_FEATURES {
            return Err(TcnError::Invariant(format!(
                "head dense {} -> {}, expected {} -> {HEAD_FEATURES}",
                self.dense.in_dim,
                self.dense.out_dim,
                FILTERS * len
            )));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f32]) -> Result<Vec<BlockTrace>, TcnError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TcnError::Shape("non-finite input".into()));
        }
        let mut h = FeatureMap::from_signal(x);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut a = layer.conv.forward(&h)?;
            layer.bn.apply(&mut a);
            a.relu();
            h = a.max_pool2();
            out.push(BlockTrace { activated: a, pooled: h.clone() });
        }
        Ok(out)
    }

    /// The 32 head features for one input channel.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>, TcnError> {
        let trace = self.trace(x)?;
        let last = trace.last().map(|b| &b.pooled).ok_or_else(|| TcnError::Invariant("no layers".into()))?;
        self.dense.forward(&last.data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    pub heads: Vec<TcnHead>,
    pub final_dense: Dense,
    pub input_len: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl TcnModel {
    pub fn new(heads: Vec<TcnHead>, final_dense: Dense, input_len: usize) -> Result<Self, TcnError> {
        let m = Self { heads, final_dense, input_len };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), TcnError> {
        if self.heads.is_empty() {
            return Err(TcnError::Invariant("no heads".into()));
        }
        if self.input_len >> N_LAYERS == 0 {
            return Err(TcnError::Invariant(format!("input length {} too short", self.input_len)));
        }
        for (i, h) in self.heads.iter().enumerate() {
            h.validate(self.input_len).map_err(|e| match e {
                TcnError::Invariant(m) => TcnError::Invariant(format!("head {i}: {m}")),
                other => other,
            })?;
        }
        self.final_dense.check()?;
        if self.final_dense.in_dim != self.heads.len() * HEAD_FEATURES || self.final_dense.out_dim != 1 {
            return Err(TcnError::Invariant("final dense must map n*32 features to 1".into()));
        }
        Ok(())
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    /// All-zero weights with identity batch norm.
    pub fn zeros(n_heads: usize, input_len: usize) -> Result<Self, TcnError> {
        let head = TcnHead {
            layers: (0..N_LAYERS)
                .map(|l| TcnLayer {
                    conv: Conv1d::zeros(if l == 0 { 1 } else { FILTERS }, FILTERS, KERNEL, 1 << l),
                    bn: BatchNorm::identity(FILTERS),
                })
                .collect(),
            dense: Dense::zeros(FILTERS * (input_len >> N_LAYERS), HEAD_FEATURES),
        };
        Self::new(vec![head; n_heads], Dense::zeros(n_heads * HEAD_FEATURES, 1), input_len)
    }

    /// Seeded random reference model: He-normal convolutions, 1/fan-in
    /// normal dense layers, and batch-norm statistics near identity.
    pub fn random(n_heads: usize, input_len: usize, seed: u64) -> Result<Self, TcnError> {
        let mut m = Self::zeros(n_heads, input_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = Normal::new(0.0f32, 0.1).expect("valid");
        let around_one = Uniform::new(0.5f32, 1.5).expect("valid");
        for head in &mut m.heads {
            for layer in &mut head.layers {
                let fan_in = (layer.conv.in_ch * layer.conv.kernel) as f32;
                let he = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("valid");
                layer.conv.weight.iter_mut().for_each(|w| *w = he.sample(&mut rng));
                layer.conv.bias.iter_mut().for_each(|b| *b = small.sample(&mut rng));
                let bn = &mut layer.bn;
                bn.gamma.iter_mut().for_each(|v| *v = around_one.sample(&mut rng));
                bn.beta.iter_mut().for_each(|v| *v = small.sample(&mut rng));
                bn.mean.iter_mut().for_each(|v| *v = small.sample(&mut rng));
                bn.var.iter_mut().for_each(|v| *v = around_one.sample(&mut rng));
            }
            randomize_dense(&mut head.dense, &mut rng);
        }
        randomize_dense(&mut m.final_dense, &mut rng);
        Ok(m)
    }

    /// Concatenated head features for `x[c]`, one row per head.
    pub fn features(&self, x: &[Vec<f32>]) -> Result<Vec<f32>, TcnError> {
        if x.len() != self.heads.len() {
            return Err(TcnError::Shape(format!("{} channels for {} heads", x.len(), self.heads.len())));
        }
        let mut f = Vec::with_capacity(self.heads.len() * HEAD_FEATURES);
        for (head, xc) in self.heads.iter().zip(x) {
            if xc.len() != self.input_len {
                return Err(TcnError::Shape(format!("channel length {} != {}", xc.len(), self.input_len)));
            }
            f.extend(head.forward(xc)?);
        }
        Ok(f)
    }

    pub fn logit(&self, x: &[Vec<f32>]) -> Result<f64, TcnError> {
        let f = self.features(x)?;
        Ok(self.final_dense.forward(&f)?[0] as f64)
    }

    /// Sepsis probability for raw channel data.
    pub fn forward_channels(&self, x: &[Vec<f32>]) -> Result<f64, TcnError> {
        Ok(sigmoid(self.logit(x)?))
    }

    /// Sepsis probability for a full buffer.
    pub fn forward(&self, v: &VitalSeries) -> Result<f64, TcnError> {
        self.forward_channels(&v.window()?)
    }

    /// Input samples that can influence one element of the last pooled map.
    pub fn receptive_field(&self) -> usize {
        let layers: Vec<(usize, usize)> =
            self.heads[0].layers.iter().map(|l| (l.conv.kernel, l.conv.dilation)).collect();
        receptive_field(&layers, true)
    }

    /// Bytes of float32 convolution and dense weights.
    pub fn weight_bytes(&self) -> usize {
        let per_head: usize = self
            .heads
            .iter()
            .map(|h| h.layers.iter().map(|l| l.conv.weight.len()).sum::<usize>() + h.dense.weight.len())
            .sum();
        4 * (per_head + self.final_dense.weight.len())
    }
}

fn randomize_dense(d: &mut Dense, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0f32, (1.0 / d.in_dim as f32).sqrt()).expect("valid");
    d.weight.iter_mut().for_each(|w| *w = n.sample(rng));
    d.bias.iter_mut().for_each(|b| *b = 0.1 * n.sample(rng));
}

/// Receptive field of a stack of `(kernel, dilation)` convolutions, each
/// followed by a pool of 2 when `pooled`.
pub fn receptive_field(layers: &[(usize, usize)], pooled: bool) -> usize {
    let mut rf = 1;
    let mut stride = 1;
    for &(k, d) in layers {
        rf += (k - 1) * d * stride;
        if pooled {
            rf += stride;
            stride *= 2;
        }
    }
    rf
}
