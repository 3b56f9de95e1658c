//! Hand-built threshold model. Each head turns its channel into the mean
//! z-score over the window; the final layer weighs those scores into a
//! sepsis logit.

use super::{
    BatchNorm, Conv1d, Dense, TcnError, TcnHead, TcnLayer, TcnModel, BN_EPS, FILTERS, HEAD_FEATURES, KERNEL, N_LAYERS,
};

/// Typical value and spread of one channel, with the sign and weight of its
/// deviation in the sepsis score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalRange {
    pub mean: f64,
    pub sd: f64,
    pub weight: f64,
}

/// HR, SBP, RR, temperature.
pub const DEMO_NOMINALS: [NominalRange; 4] = [
    NominalRange { mean: 75.0, sd: 10.0, weight: 1.0 },
    NominalRange { mean: 120.0, sd: 10.0, weight: -1.0 },
    NominalRange { mean: 15.0, sd: 3.0, weight: 1.0 },
    NominalRange { mean: 37.0, sd: 0.5, weight: 1.0 },
];
pub const DEMO_BIAS: f64 = -3.0;

fn demo_head(r: NominalRange, input_len: usize) -> TcnHead {
    let mut layers = Vec::with_capacity(N_LAYERS);
    for l in 0..N_LAYERS {
        let in_ch = if l == 0 { 1 } else { FILTERS };
        let mut conv = Conv1d::zeros(in_ch, FILTERS, KERNEL, 1 << l);
        let mut bn = BatchNorm::identity(FILTERS);
        if l == 0 {
            // channel 0 carries x, channel 1 carries -x
            *conv.w_mut(0, 0, KERNEL - 1) = 1.0;
            *conv.w_mut(1, 0, KERNEL - 1) = -1.0;
            let var = (r.sd * r.sd - BN_EPS) as f32;
            bn.mean[0] = r.mean as f32;
            bn.mean[1] = -r.mean as f32;
            bn.var[0] = var;
            bn.var[1] = var;
        } else {
            *conv.w_mut(0, 0, KERNEL - 1) = 1.0;
            *conv.w_mut(1, 1, KERNEL - 1) = 1.0;
        }
        layers.push(TcnLayer { conv, bn });
    }
    let len = input_len >> N_LAYERS;
    let mut dense = Dense::zeros(FILTERS * len, HEAD_FEATURES);
    for t in 0..len {
        dense.weight[t] = 1.0 / len as f32;
        dense.weight[len + t] = -1.0 / len as f32;
    }
    TcnHead { layers, dense }
}

/// Threshold model over the four standard channels. With every channel at
/// its nominal mean the output is sigmoid(-3).
pub fn threshold_demo(input_len: usize) -> Result<TcnModel, TcnError> {
    let heads: Vec<TcnHead> = DEMO_NOMINALS.iter().map(|&r| demo_head(r, input_len)).collect();
    let mut fin = Dense::zeros(heads.len() * HEAD_FEATURES, 1);
    for (c, r) in DEMO_NOMINALS.iter().enumerate() {
        fin.weight[c * HEAD_FEATURES] = r.weight as f32;
    }
    fin.bias[0] = DEMO_BIAS as f32;
    TcnModel::new(heads, fin, input_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcn::{sigmoid, INPUT_LEN};

    fn constant(vals: [f64; 4]) -> Vec<Vec<f32>> {
        vals.iter().map(|&v| vec![v as f32; INPUT_LEN]).collect()
    }

    #[test]
    fn nominal_vitals_score_low() {
        let m = threshold_demo(INPUT_LEN).unwrap();
        let p = m.forward_channels(&constant([75.0, 120.0, 15.0, 37.0])).unwrap();
        assert!((p - sigmoid(DEMO_BIAS)).abs() < 1e-5, "{p}");
    }

    #[test]
    fn septic_vitals_score_high() {
        let m = threshold_demo(INPUT_LEN).unwrap();
        let p = m.forward_channels(&constant([110.0, 90.0, 24.0, 38.6])).unwrap();
        // z = 3.5 + 3 + 3 + 3.2
        assert!((p - sigmoid(DEMO_BIAS + 12.7)).abs() < 1e-4, "{p}");
        assert!(p > 0.99);
    }

    #[test]
    fn head_feature_is_mean_z_score() {
        let m = threshold_demo(INPUT_LEN).unwrap();
        // a constant channel gives a constant z-score everywhere
        let f = m.heads[0].forward(&vec![95.0; INPUT_LEN]).unwrap();
        assert!((f[0] - 2.0).abs() < 1e-5, "{}", f[0]);
        assert!(f[1..].iter().all(|&v| v == 0.0));
    }
}
