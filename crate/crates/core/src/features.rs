//! Featurization of optimizer state for the learned update rule.

use crate::opt_state::{Factored, LossAccumulators, TensorAccumulators, NUM_LOSS_TIMESCALES};

pub const PROGRESS_OFFSETS: [f64; 9] = [0.03, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0, 1.1];
pub const NUM_PROGRESS: usize = PROGRESS_OFFSETS.len();
pub const NUM_LOSS_FEATURES: usize = NUM_LOSS_TIMESCALES * (NUM_LOSS_TIMESCALES - 1) / 2;
pub const NUM_MOMENT_FEATURES: usize = 5;
pub const MAX_RANK: usize = 4;
pub const NUM_RANK_FEATURES: usize = MAX_RANK + 1;
/// Width of the per-tensor feature vector.
pub const TENSOR_FEATURES: usize = NUM_PROGRESS + NUM_LOSS_FEATURES + NUM_MOMENT_FEATURES + NUM_RANK_FEATURES;
/// Columns of the per-parameter feature matrix.
pub const PARAM_FEATURES: usize = 12;

pub const EPS: f64 = 1e-8;

pub fn progress_features(t: u64, total_steps: u64) -> [f64; NUM_PROGRESS] {
    let frac = t as f64 / total_steps.max(1) as f64;
    PROGRESS_OFFSETS.map(|s| (10.0 * (frac - s)).tanh())
}

/// Pairwise comparisons of loss EMAs (shorter timescale `i` against
/// longer `j`), each scaled by how far the longer EMA sits above its own
/// running minimum. Flat loss gives 0, a falling loss −1, a rising loss +1.
pub fn loss_features(acc: &LossAccumulators) -> [f64; NUM_LOSS_FEATURES] {
    if acc.poisoned {
        return [1.0; NUM_LOSS_FEATURES];
    }
    let mut out = [0.0; NUM_LOSS_FEATURES];
    if !acc.initialized {
        return out;
    }
    let mut k = 0;
    for i in 0..NUM_LOSS_TIMESCALES {
        for j in i + 1..NUM_LOSS_TIMESCALES {
            let (ei, ej, mj) = (acc.ema[i], acc.ema[j], acc.running_min[j]);
            // The guard scales with the losses so the ratio stays invariant
            // to multiplying every loss by a positive constant.
            let denom = (ej - mj) + 1e-8 * (ej.abs() + mj.abs()) + f64::MIN_POSITIVE;
            let f = (ei - ej) / denom;
            out[k] = if f.is_nan() { 0.0 } else { f.clamp(-1.0, 1.0) };
            k += 1;
        }
    }
    out
}

#[inline]
pub fn clip_log(x: f64) -> f64 {
    let v = (1e-8 + (10.0 * x).abs()).ln();
    if v.is_nan() {
        5.0
    } else {
        v.clamp(-5.0, 5.0)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `[var m_0.9, var m_0.99, var m_0.999, mean v, var v]`, clip-log transformed.
pub fn moment_features(acc: &TensorAccumulators) -> [f64; NUM_MOMENT_FEATURES] {
    let (mean_v, var_v) = mean_var(&acc.second_moment);
    [
        mean_var(&acc.momentum[0]).1,
        mean_var(&acc.momentum[1]).1,
        mean_var(&acc.momentum[2]).1,
        mean_v,
        var_v,
    ]
    .map(clip_log)
}

pub fn rank_onehot(rank: usize) -> [f64; NUM_RANK_FEATURES] {
    let mut out = [0.0; NUM_RANK_FEATURES];
    out[rank.min(MAX_RANK)] = 1.0;
    out
}

/// Full per-tensor input row: progress, loss, moment and rank features.
pub fn tensor_features(
    progress: &[f64; NUM_PROGRESS],
    loss: &[f64; NUM_LOSS_FEATURES],
    acc: &TensorAccumulators,
) -> [f64; TENSOR_FEATURES] {
    let mut out = [0.0; TENSOR_FEATURES];
    out[..NUM_PROGRESS].copy_from_slice(progress);
    out[NUM_PROGRESS..NUM_PROGRESS + NUM_LOSS_FEATURES].copy_from_slice(loss);
    let o = NUM_PROGRESS + NUM_LOSS_FEATURES;
    out[o..o + NUM_MOMENT_FEATURES].copy_from_slice(&moment_features(acc));
    out[o + NUM_MOMENT_FEATURES..].copy_from_slice(&rank_onehot(acc.shape.len()));
    out
}

/// Per-parameter features, stored column-major: column `k` occupies
/// `data[k * n..(k + 1) * n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerParamFeatures {
    pub n: usize,
    pub data: Vec<f64>,
}

impl PerParamFeatures {
    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn row(&self, i: usize) -> [f64; PARAM_FEATURES] {
        std::array::from_fn(|k| self.data[k * self.n + i])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Raw (unnormalized) columns: g, p, three momenta, three `m/(√v+ε)`,
/// three Adafactor-normalized gradients and `1/(√v+ε)`.
pub fn raw_param_features(params: &[f64], grads: &[f64], acc: &TensorAccumulators) -> PerParamFeatures {
    let n = params.len();
    let mut data = vec![0.0; PARAM_FEATURES * n];
    {
        let (c0, rest) = data.split_at_mut(n);
        c0.copy_from_slice(grads);
        rest[..n].copy_from_slice(params);
    }
    for k in 0..3 {
        data[(2 + k) * n..(3 + k) * n].copy_from_slice(&acc.momentum[k]);
    }
    let rsqrt_v: Vec<f64> = acc.second_moment.iter().map(|&v| 1.0 / (v.sqrt() + EPS)).collect();
    for k in 0..3 {
        let col = &mut data[(5 + k) * n..(6 + k) * n];
        for ((c, &m), &r) in col.iter_mut().zip(&acc.momentum[k]).zip(&rsqrt_v) {
            *c = m * r;
        }
    }
    match &acc.factored {
        Factored::RowCol {
            cols,
            row_ema,
            col_ema,
            ..
        } => {
            let c = *cols;
            for k in 0..3 {
                let rmean = row_ema[k].iter().sum::<f64>() / row_ema[k].len() as f64;
                let col = &mut data[(8 + k) * n..(9 + k) * n];
                for (idx, out) in col.iter_mut().enumerate() {
                    let (i, j) = (idx / c, idx % c);
                    let vhat = if rmean > 0.0 {
                        row_ema[k][i] * col_ema[k][j] / rmean
                    } else {
                        0.0
                    };
                    *out = grads[idx] / (vhat.sqrt() + EPS);
                }
            }
        }
        Factored::Full(full) => {
            for k in 0..3 {
                let col = &mut data[(8 + k) * n..(9 + k) * n];
                for ((out, &g), &v) in col.iter_mut().zip(grads).zip(&full[k]) {
                    *out = g / (v.sqrt() + EPS);
                }
            }
        }
    }
    data[11 * n..].copy_from_slice(&rsqrt_v);
    PerParamFeatures { n, data }
}

/// Divide a column by its root-mean-square; identically zero (or
/// non-finite) columns become zero.
pub fn rms_normalize(col: &mut [f64]) {
    let amax = col.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if !(amax > 0.0 && amax.is_finite()) {
        col.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // Scale by the max first so squaring cannot overflow.
    let ms = col.iter().map(|&v| (v / amax) * (v / amax)).sum::<f64>() / col.len() as f64;
    let rms = amax * ms.sqrt();
    col.iter_mut().for_each(|v| *v /= rms);
}

pub fn per_param_features(params: &[f64], grads: &[f64], acc: &TensorAccumulators) -> PerParamFeatures {
    let mut f = raw_param_features(params, grads, acc);
    let n = f.n;
    for k in 0..PARAM_FEATURES {
        rms_normalize(&mut f.data[k * n..(k + 1) * n]);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opt_state::TimescaleSpacing;

    #[test]
    fn progress_examples() {
        let p = progress_features(0, 100);
        assert!((p[7] + 1.0).abs() < 1e-8);
        assert_eq!(progress_features(40, 100)[3], 0.0);
        assert!((progress_features(50, 100)[3] - 1f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn clip_log_examples() {
        assert_eq!(clip_log(0.0), -5.0);
        assert!(clip_log(0.1).abs() < 1e-7);
        let x = (5f64.exp() - 1e-8) / 10.0;
        assert!((clip_log(x) - 5.0).abs() < 1e-12);
    }

    fn feed(losses: impl IntoIterator<Item = f64>) -> LossAccumulators {
        let mut acc = LossAccumulators::new(1000, TimescaleSpacing::Log);
        for l in losses {
            acc.update(l);
        }
        acc
    }

    #[test]
    fn loss_feature_semantics() {
        assert!(loss_features(&feed(std::iter::repeat_n(3.0, 50))).iter().all(|&f| f == 0.0));
        let down = loss_features(&feed((0..500).map(|i| 10.0 / (1.0 + i as f64))));
        assert!(down[NUM_LOSS_FEATURES - 1] < -0.99, "{:?}", down);
        let up = loss_features(&feed((0..50).map(|i| 1.0 + (i as f64 / 5.0).exp())));
        assert!(up.iter().all(|&f| f > 0.0));
        let jump = loss_features(&feed((0..60).map(|i| if i < 58 { 1.0 } else { 10.0 })));
        assert!(jump[NUM_LOSS_TIMESCALES - 2] > 0.99, "{jump:?}");
        let mut acc = feed([1.0, 2.0]);
        acc.update(f64::INFINITY);
        assert!(loss_features(&acc).iter().all(|&f| f == 1.0));
        assert!(loss_features(&LossAccumulators::new(10, TimescaleSpacing::Log))
            .iter()
            .all(|&f| f == 0.0));
    }

    #[test]
    fn zero_inputs_leave_only_parameter_column() {
        let acc = TensorAccumulators::zeros(&[2, 3]);
        let f = per_param_features(&[1.0, -2.0, 3.0, 0.5, 0.0, 1.0], &[0.0; 6], &acc);
        for k in 0..PARAM_FEATURES {
            let rms = (f.column(k).iter().map(|v| v * v).sum::<f64>() / 6.0).sqrt();
            match k {
                1 | 11 => assert!((rms - 1.0).abs() < 1e-12),
                _ => assert_eq!(rms, 0.0, "column {k}"),
            }
        }
    }
}
