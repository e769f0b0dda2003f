//! The learned update rule: cross-tensor feature mixing, a per-tensor
//! LSTM, hypernetwork heads, and a generated per-parameter MLP.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{
    loss_features, per_param_features, progress_features, tensor_features, PerParamFeatures, PARAM_FEATURES,
    TENSOR_FEATURES,
};
use crate::numkit::{ByteReader, ByteWriter, RngKey, Tensor};
use crate::opt_state::{init_state_with, OptimizerState, TimescaleSpacing};
use crate::optimizer::{Optimizer, StepReport};
use crate::task_zoo::ParamShape;

/// Hidden width of the generated per-parameter MLP.
pub const MLP_HIDDEN: usize = 4;
/// Outputs of the per-parameter MLP: direction `d` and log-magnitude `m`.
pub const MLP_OUT: usize = 2;
/// Fixed multiplier on the generated MLP weights.
pub const HYPER_SCALE: f64 = 100.0;

/// Weights of the per-parameter MLP `F → 4 → 4 → 2` for a given `F`.
pub const fn mlp_param_count(f: usize) -> usize {
    MLP_HIDDEN * f + MLP_HIDDEN + MLP_HIDDEN * MLP_HIDDEN + MLP_HIDDEN + MLP_OUT * MLP_HIDDEN + MLP_OUT
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    /// LSTM and mixing width.
    pub hidden: usize,
    /// Number of MLP weight sets in the bank.
    pub bank: usize,
    /// Per-parameter feature columns.
    pub param_features: usize,
    /// Per-tensor feature width.
    pub tensor_features: usize,
}

impl Dims {
    pub fn new(hidden: usize, bank: usize) -> Self {
        Self {
            hidden,
            bank,
            param_features: PARAM_FEATURES,
            tensor_features: TENSOR_FEATURES,
        }
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self::new(64, 8)
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub lstm_wx: usize,
    pub lstm_wh: usize,
    pub lstm_b: usize,
    pub f0_w: usize,
    pub f0_b: usize,
    pub f2_w: usize,
    pub f2_b: usize,
    pub f1_w: usize,
    pub f1_b: usize,
    pub lr_w: usize,
    pub lr_b: usize,
    pub hyper_w: usize,
    pub hyper_b: usize,
    pub bank: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(d: Dims) -> Self {
        let (h, b, f, dt) = (d.hidden, d.bank, d.param_features, d.tensor_features);
        let mut o = 0;
        let mut take = |n: usize| {
            let start = o;
            o += n;
            start
        };
        let lstm_wx = take(4 * h * h);
        let lstm_wh = take(4 * h * h);
        let lstm_b = take(4 * h);
        let f0_w = take(h * dt);
        let f0_b = take(h);
        let f2_w = take(h * dt);
        let f2_b = take(h);
        let f1_w = take(h * h);
        let f1_b = take(h);
        let lr_w = take(h);
        let lr_b = take(1);
        let hyper_w = take(b * h);
        let hyper_b = take(b);
        let bank = take(b * mlp_param_count(f));
        Self {
            lstm_wx,
            lstm_wh,
            lstm_b,
            f0_w,
            f0_b,
            f2_w,
            f2_b,
            f1_w,
            f1_b,
            lr_w,
            lr_b,
            hyper_w,
            hyper_b,
            bank,
            total: o,
        }
    }
}

/// Closed-form parameter count.
pub fn param_count(d: Dims) -> usize {
    let (h, b, f, dt) = (d.hidden, d.bank, d.param_features, d.tensor_features);
    (8 * h * h + 4 * h) + (2 * (h * dt + h) + h * h + h) + (h + 1) + (b * h + b) + b * mlp_param_count(f)
}

/// Scaling constants of the final update formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateConstants {
    /// Multiplier on the direction output `d`.
    pub step_mult: f64,
    /// Multiplier on the magnitude output `m` inside the exponent.
    pub magnitude_mult: f64,
    /// Multiplier on `c_lr` inside the exponent.
    pub lr_mult: f64,
}

impl Default for UpdateConstants {
    fn default() -> Self {
        Self {
            step_mult: 0.001,
            magnitude_mult: 0.001,
            lr_mult: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaParams {
    pub dims: Dims,
    pub layout: Layout,
    pub flat: Vec<f64>,
}

/// Bias added to the LSTM forget gate (not learned).
pub const FORGET_BIAS: f64 = 1.0;
const LSTM_VARIANT_FORGET_BIAS_ONE: u8 = 1;

impl MetaParams {
    pub fn zeros(dims: Dims) -> Self {
        let layout = Layout::new(dims);
        Self {
            flat: vec![0.0; layout.total],
            dims,
            layout,
        }
    }

    pub fn from_flat(dims: Dims, flat: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(dims);
        if flat.len() != layout.total {
            return Err(Error::Shape(format!(
                "flat meta-parameters: expected {}, got {}",
                layout.total,
                flat.len()
            )));
        }
        Ok(Self { dims, layout, flat })
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn slice(&self, start: usize, n: usize) -> &[f64] {
        &self.flat[start..start + n]
    }

    pub fn bank_entry(&self, k: usize) -> &[f64] {
        let n = mlp_param_count(self.dims.param_features);
        self.slice(self.layout.bank + k * n, n)
    }

    /// `self + scale · dir`, as new parameters.
    pub fn perturbed(&self, dir: &[f64], scale: f64) -> MetaParams {
        let flat = self.flat.iter().zip(dir).map(|(a, b)| a + scale * b).collect();
        MetaParams {
            dims: self.dims,
            layout: self.layout.clone(),
            flat,
        }
    }
}

/// Truncated-normal weights scaled by `1/√fan_in`, zero output heads, a
/// uniform head bias over the bank, and a small random bank.
pub fn init_meta_params(key: RngKey, dims: Dims) -> MetaParams {
    let mut p = MetaParams::zeros(dims);
    let l = p.layout.clone();
    let (h, b, f, dt) = (dims.hidden, dims.bank, dims.param_features, dims.tensor_features);
    let fill = |start: usize, n: usize, fan_in: usize, label: &str, flat: &mut [f64]| {
        let mut g = key.fold_label(label).generator();
        let s = 1.0 / (fan_in as f64).sqrt();
        for v in &mut flat[start..start + n] {
            *v = s * g.truncated_normal();
        }
    };
    fill(l.lstm_wx, 4 * h * h, h, "lstm_wx", &mut p.flat);
    fill(l.lstm_wh, 4 * h * h, h, "lstm_wh", &mut p.flat);
    fill(l.f0_w, h * dt, dt, "f0", &mut p.flat);
    fill(l.f2_w, h * dt, dt, "f2", &mut p.flat);
    fill(l.f1_w, h * h, h, "f1", &mut p.flat);
    for v in &mut p.flat[l.hyper_b..l.hyper_b + b] {
        *v = 1.0 / b as f64;
    }
    // Bank entries are drawn so that their uniform average, after the
    // fixed 100× scale, is a standard 1/√fan_in initialization.
    let mut g = key.fold_label("bank").generator();
    let n = mlp_param_count(f);
    for k in 0..b {
        let base = l.bank + k * n;
        let mut o = base;
        for (fan_in, fan_out) in [(f, MLP_HIDDEN), (MLP_HIDDEN, MLP_HIDDEN), (MLP_HIDDEN, MLP_OUT)] {
            let s = (b as f64).sqrt() / (HYPER_SCALE * (fan_in as f64).sqrt());
            for v in &mut p.flat[o..o + fan_in * fan_out] {
                *v = s * g.normal();
            }
            o += fan_in * fan_out + fan_out;
        }
    }
    p
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    crate::numkit::sigmoid(x)
}

/// `out[o] = b[o] + Σ_i w[o, i] x[i]` for a row-major `[out × in]` `w`.
#[inline]
fn linear(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    crate::numkit::affine(w, b, x, out)
}

/// `F0(x) + max_rows(relu(F1(relu(F2(x)))))`, one output row per tensor.
pub fn mix_tensors(features: &[[f64; TENSOR_FEATURES]], theta: &MetaParams) -> Vec<Vec<f64>> {
    let h = theta.dims.hidden;
    let dt = theta.dims.tensor_features;
    let l = &theta.layout;
    let mut pooled = vec![f64::NEG_INFINITY; h];
    let mut direct = Vec::with_capacity(features.len());
    let mut tmp2 = vec![0.0; h];
    let mut tmp1 = vec![0.0; h];
    for x in features {
        let mut d = vec![0.0; h];
        linear(theta.slice(l.f0_w, h * dt), theta.slice(l.f0_b, h), x, &mut d);
        direct.push(d);
        linear(theta.slice(l.f2_w, h * dt), theta.slice(l.f2_b, h), x, &mut tmp2);
        tmp2.iter_mut().for_each(|v| *v = relu(*v));
        linear(theta.slice(l.f1_w, h * h), theta.slice(l.f1_b, h), &tmp2, &mut tmp1);
        for (p, &v) in pooled.iter_mut().zip(&tmp1) {
            *p = p.max(relu(v));
        }
    }
    for d in &mut direct {
        d.iter_mut().zip(&pooled).for_each(|(a, &p)| *a += p);
    }
    direct
}

/// Output of one per-tensor LSTM step.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorStep {
    pub c_lr: f64,
    pub c_hyper: Vec<f64>,
    /// New carry: hidden state followed by cell state.
    pub carry: Vec<f64>,
}

/// One LSTM step (gate order input, forget, cell, output) and the two heads.
pub fn tensor_step(mixed: &[f64], carry: &[f64], theta: &MetaParams) -> TensorStep {
    let h = theta.dims.hidden;
    let b = theta.dims.bank;
    let l = &theta.layout;
    let (h_prev, c_prev) = if carry.len() == 2 * h {
        carry.split_at(h)
    } else {
        (&[][..], &[][..])
    };
    let mut gates = vec![0.0; 4 * h];
    linear(theta.slice(l.lstm_wx, 4 * h * h), theta.slice(l.lstm_b, 4 * h), mixed, &mut gates);
    if !h_prev.is_empty() {
        let wh = theta.slice(l.lstm_wh, 4 * h * h);
        for (o, g) in gates.iter_mut().enumerate() {
            *g += wh[o * h..(o + 1) * h].iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut new = vec![0.0; 2 * h];
    for j in 0..h {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[h + j] + FORGET_BIAS);
        let g = gates[2 * h + j].tanh();
        let o = sigmoid(gates[3 * h + j]);
        let c = f * c_prev.get(j).copied().unwrap_or(0.0) + i * g;
        new[h + j] = c;
        new[j] = o * c.tanh();
    }
    let hidden = &new[..h];
    let mut c_lr = [0.0];
    linear(theta.slice(l.lr_w, h), theta.slice(l.lr_b, 1), hidden, &mut c_lr);
    let mut c_hyper = vec![0.0; b];
    linear(theta.slice(l.hyper_w, b * h), theta.slice(l.hyper_b, b), hidden, &mut c_hyper);
    TensorStep {
        c_lr: c_lr[0],
        c_hyper,
        carry: new,
    }
}

/// `100 · Σ_b c_hyper[b] · bank[b]`, with no normalization of `c_hyper`.
pub fn generate_mlp(c_hyper: &[f64], theta: &MetaParams) -> Vec<f64> {
    let n = mlp_param_count(theta.dims.param_features);
    let mut w = vec![0.0; n];
    for (k, &c) in c_hyper.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (a, &e) in w.iter_mut().zip(theta.bank_entry(k)) {
            *a += HYPER_SCALE * c * e;
        }
    }
    w
}

/// Per-parameter MLP evaluated on one feature row; returns `(d, m)`.
#[inline]
pub fn mlp_forward(w: &[f64], f: usize, x: &[f64]) -> (f64, f64) {
    let (w1, rest) = w.split_at(MLP_HIDDEN * f);
    let (b1, rest) = rest.split_at(MLP_HIDDEN);
    let (w2, rest) = rest.split_at(MLP_HIDDEN * MLP_HIDDEN);
    let (b2, rest) = rest.split_at(MLP_HIDDEN);
    let (w3, b3) = rest.split_at(MLP_OUT * MLP_HIDDEN);
    let mut h1 = [0.0; MLP_HIDDEN];
    for (o, v) in h1.iter_mut().enumerate() {
        let row = &w1[o * f..(o + 1) * f];
        *v = relu(b1[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
    }
    let mut h2 = [0.0; MLP_HIDDEN];
    for (o, v) in h2.iter_mut().enumerate() {
        let row = &w2[o * MLP_HIDDEN..(o + 1) * MLP_HIDDEN];
        *v = relu(b2[o] + row.iter().zip(&h1).map(|(a, b)| a * b).sum::<f64>());
    }
    let d = b3[0] + w3[..MLP_HIDDEN].iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>();
    let m = b3[1] + w3[MLP_HIDDEN..].iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>();
    (d, m)
}

/// `Δp = step_mult · d · exp(magnitude_mult · m + lr_mult · c_lr) · ‖p‖₂`
/// for every element. The returned tensor is subtracted from the parameters.
pub fn apply_update(
    param: &Tensor,
    feats: &PerParamFeatures,
    c_lr: f64,
    mlp: &[f64],
    consts: &UpdateConstants,
    tensor_index: usize,
) -> Result<Tensor> {
    if !feats.is_finite() {
        return Err(Error::NonFiniteFeature { tensor: tensor_index });
    }
    let norm = crate::numkit::global_norm(param);
    let n = feats.n;
    let f = feats.data.len().checked_div(n).unwrap_or(0);
    debug_assert_eq!(mlp.len(), mlp_param_count(f));
    let mut delta = Tensor::zeros(param.shape());
    if norm == 0.0 {
        return Ok(delta);
    }
    let lr_term = consts.lr_mult * c_lr;
    let mut row = vec![0.0; f];
    for (i, out) in delta.data_mut().iter_mut().enumerate() {
        for (k, r) in row.iter_mut().enumerate() {
            *r = feats.data[k * n + i];
        }
        let (d, m) = mlp_forward(mlp, f, &row);
        *out = consts.step_mult * d * (consts.magnitude_mult * m + lr_term).exp() * norm;
    }
    Ok(delta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOutput {
    pub delta: Vec<Tensor>,
    /// Mean |Δp| per tensor.
    pub step_size_log: Vec<f64>,
}

/// One full learned-optimizer step: accumulators, features, mixing, LSTM,
/// generated MLP, update. Parameters and state are modified in place.
pub fn velo_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    loss: f64,
    state: &mut OptimizerState,
    theta: &MetaParams,
    consts: &UpdateConstants,
) -> Result<UpdateOutput> {
    let t_before = state.t;
    state.update(grads, loss)?;
    let progress = progress_features(t_before, state.total_steps);
    let lf = loss_features(&state.loss_acc);
    let tf: Vec<[f64; TENSOR_FEATURES]> = state
        .per_tensor
        .iter()
        .map(|acc| tensor_features(&progress, &lf, acc))
        .collect();
    for (i, row) in tf.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { tensor: i });
        }
    }
    let mixed = mix_tensors(&tf, theta);
    let mut delta = Vec::with_capacity(params.len());
    let mut step_size_log = Vec::with_capacity(params.len());
    for (i, p) in params.iter_mut().enumerate() {
        let ts = tensor_step(&mixed[i], &state.carry[i], theta);
        state.carry[i] = ts.carry;
        let mlp = generate_mlp(&ts.c_hyper, theta);
        let feats = per_param_features(p.data(), grads[i].data(), &state.per_tensor[i]);
        let d = apply_update(p, &feats, ts.c_lr, &mlp, consts, i)?;
        let mean_abs = d.data().iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64;
        for (pv, &dv) in p.data_mut().iter_mut().zip(d.data()) {
            *pv -= dv;
        }
        step_size_log.push(mean_abs);
        delta.push(d);
    }
    Ok(UpdateOutput { delta, step_size_log })
}

/// The learned optimizer behind the common [`Optimizer`] interface.
#[derive(Clone, Debug)]
pub struct VeloOptimizer {
    pub theta: std::sync::Arc<MetaParams>,
    pub consts: UpdateConstants,
    pub spacing: TimescaleSpacing,
    pub state: Option<OptimizerState>,
}

impl VeloOptimizer {
    pub fn new(theta: std::sync::Arc<MetaParams>) -> Self {
        Self {
            theta,
            consts: UpdateConstants::default(),
            spacing: TimescaleSpacing::Log,
            state: None,
        }
    }
}

impl Optimizer for VeloOptimizer {
    fn name(&self) -> String {
        "velo".into()
    }

    fn init(&mut self, shapes: &[ParamShape], total_steps: u64) -> Result<()> {
        self.state = Some(init_state_with(shapes, total_steps, self.spacing)?);
        Ok(())
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], loss: f64) -> Result<StepReport> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Config("optimizer stepped before init".into()))?;
        let out = velo_step(params, grads, loss, state, &self.theta, &self.consts)?;
        Ok(StepReport {
            applied: true,
            step_sizes: Some(out.step_size_log),
        })
    }
}

const CKPT_MAGIC: &[u8; 4] = b"VELO";
const CKPT_VERSION: u32 = 1;

pub fn encode_checkpoint(theta: &MetaParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CKPT_MAGIC).u32(CKPT_VERSION);
    let d = theta.dims;
    w.u32(d.hidden as u32)
        .u32(d.bank as u32)
        .u32(d.param_features as u32)
        .u32(d.tensor_features as u32)
        .u8(LSTM_VARIANT_FORGET_BIAS_ONE);
    w.f64s(&theta.flat);
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MetaParams> {
    let mut r = ByteReader::new(bytes, "meta-parameter checkpoint");
    if r.take(4)? != CKPT_MAGIC {
        return Err(r.error("bad magic"));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let dims = Dims {
        hidden: r.u32()? as usize,
        bank: r.u32()? as usize,
        param_features: r.u32()? as usize,
        tensor_features: r.u32()? as usize,
    };
    let variant = r.u8()?;
    if variant != LSTM_VARIANT_FORGET_BIAS_ONE {
        return Err(r.error(format!("unknown LSTM variant {variant}")));
    }
    if dims.param_features != PARAM_FEATURES || dims.tensor_features != TENSOR_FEATURES {
        return Err(r.error(format!(
            "feature widths {}/{} do not match this build ({PARAM_FEATURES}/{TENSOR_FEATURES})",
            dims.param_features, dims.tensor_features
        )));
    }
    let flat = r.f64s()?;
    r.expect_end()?;
    MetaParams::from_flat(dims, flat)
}

pub fn save_checkpoint(theta: &MetaParams, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write-then-rename so watchers never see a partial file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(theta)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MetaParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
