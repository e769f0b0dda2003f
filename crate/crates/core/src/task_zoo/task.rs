use std::collections::VecDeque;
use std::sync::Arc;

use super::config::{Architecture, Augmentation, Family, Initializer, ReparamMode, ResolvedConfig, TaskConfig};
use super::dataset::{resolve_dataset, Dataset, DatasetKind};
use super::model::{ByteRnn, Head, Mlp, Model, ParamShape};
use crate::error::{Error, Result};
use crate::numkit::{global_norm_all, RngKey, Tensor};

/// Something an optimizer can train: fixed parameter shapes, a
/// deterministic initializer and a stochastic loss/gradient oracle.
pub trait Problem: Send + Sync {
    fn name(&self) -> String;

    fn param_shapes(&self) -> &[ParamShape];

    fn init_params(&self, key: RngKey) -> Vec<Tensor>;

    /// Mean minibatch loss and its gradient. `ctx` carries per-run state
    /// (the step counter and any delayed-gradient queues).
    fn loss_and_grad(&self, params: &[Tensor], batch_key: RngKey, ctx: &mut RunContext) -> Result<(f64, Vec<Tensor>)>;

    /// Loss only, with no side effects on run state.
    fn loss(&self, params: &[Tensor], batch_key: RngKey) -> Result<f64>;

    fn family(&self) -> Option<Family> {
        None
    }

    /// How to hand-normalize this problem's loss for monitoring, if known.
    fn monitor_kind(&self) -> Option<LossKind> {
        None
    }

    fn num_params(&self) -> usize {
        self.param_shapes().iter().map(ParamShape::len).sum()
    }
}

/// Per-run mutable state owned by the training loop.
#[derive(Clone, Debug, Default)]
pub struct RunContext {
    pub step: u64,
    delay_queues: Vec<VecDeque<Vec<Tensor>>>,
}

impl RunContext {
    pub fn new() -> Self {
        Self::default()
    }
}

/// How a family's loss is scaled for monitoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Classification { num_classes: usize },
    Reconstruction,
}

/// Map a raw loss into a roughly family-independent range for logs.
pub fn hand_normalize_loss(kind: LossKind, loss: f64) -> f64 {
    match kind {
        LossKind::Classification { num_classes } => {
            let v = loss / (num_classes.max(2) as f64).ln();
            if v.is_nan() {
                10.0
            } else {
                v.clamp(0.0, 10.0)
            }
        }
        LossKind::Reconstruction => {
            let v = (loss + 1e-8).log10();
            if v.is_nan() {
                if loss.is_nan() {
                    10.0
                } else {
                    -10.0
                }
            } else {
                v.clamp(-10.0, 10.0)
            }
        }
    }
}

enum AugState {
    Reparam(Vec<Tensor>),
    Plain,
}

pub struct Task {
    config: TaskConfig,
    resolved: ResolvedConfig,
    model: Model,
    shapes: Vec<ParamShape>,
    dataset: Arc<Dataset>,
    batch_rows: usize,
    window: usize,
    aug_state: Vec<AugState>,
    id: String,
}

impl std::fmt::Debug for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Task").field("id", &self.id).field("shapes", &self.shapes).finish()
    }
}

fn reduced_batch(base: usize, augs: &[Augmentation]) -> usize {
    let frac: f64 = augs
        .iter()
        .map(|a| match a {
            Augmentation::BatchReduce { fraction } => *fraction,
            _ => 1.0,
        })
        .product();
    ((base as f64 * frac).round() as usize).max(1)
}

impl Task {
    pub fn from_config(config: &TaskConfig) -> Result<Task> {
        let resolved = config.resolve()?;
        let (model, dataset, window) = match &resolved.arch {
            Architecture::Mlp {
                hidden,
                num_classes,
                image_size,
            } => {
                let ds = resolve_dataset(&resolved.dataset, *image_size, *num_classes)?;
                let mut sizes = vec![image_size * image_size];
                sizes.extend(hidden);
                sizes.push(*num_classes);
                let model = Model::Mlp(Mlp {
                    sizes,
                    activation: resolved.activation,
                    head: Head::Classifier,
                });
                (model, ds, 0)
            }
            Architecture::MlpAe {
                hidden,
                image_size,
                log_loss,
                center_data,
                constrain,
            } => {
                let ds = resolve_dataset(&resolved.dataset, *image_size, 1)?;
                let d = image_size * image_size;
                let mut sizes = vec![d];
                sizes.extend(hidden);
                sizes.push(d);
                let model = Model::Mlp(Mlp {
                    sizes,
                    activation: resolved.activation,
                    head: Head::Reconstruction {
                        log_loss: *log_loss,
                        center: *center_data,
                        constrain: *constrain,
                    },
                });
                (model, ds, 0)
            }
            Architecture::ByteRnn { hidden, seq_len } => {
                let ds = resolve_dataset(&resolved.dataset, 1, 256)?;
                let model = Model::Rnn(ByteRnn {
                    hidden: *hidden,
                    seq_len: *seq_len,
                });
                (model, ds, seq_len + 1)
            }
        };
        let wants_text = matches!(model, Model::Rnn(_));
        if wants_text != (dataset.kind == DatasetKind::Text) {
            return Err(Error::Config(format!(
                "dataset {:?} does not match family {}",
                resolved.dataset,
                resolved.family.name()
            )));
        }
        let shapes = model.param_shapes();
        let aug_state = resolved
            .augmentations
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                Augmentation::Reparam { mode, range, seed } => {
                    AugState::Reparam(reparam_scales(&shapes, *mode, *range, RngKey::new(*seed).fold_in(i as u64)))
                }
                _ => AugState::Plain,
            })
            .collect();
        Ok(Task {
            id: format!("{}-{:016x}", resolved.family.name(), config.task_id()),
            batch_rows: reduced_batch(resolved.batch_size, &resolved.augmentations),
            config: config.clone(),
            resolved,
            model,
            shapes,
            dataset,
            window,
            aug_state,
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn resolved(&self) -> &ResolvedConfig {
        &self.resolved
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn batch_rows(&self) -> usize {
        self.batch_rows
    }

    pub fn loss_kind(&self) -> LossKind {
        match &self.resolved.arch {
            Architecture::Mlp { num_classes, .. } => LossKind::Classification {
                num_classes: *num_classes,
            },
            Architecture::MlpAe { .. } => LossKind::Reconstruction,
            Architecture::ByteRnn { .. } => LossKind::Classification { num_classes: 256 },
        }
    }

    /// Parameters in the un-augmented coordinates, before any rescaling.
    pub fn base_init(&self, key: RngKey) -> Vec<Tensor> {
        init_tensors(&self.shapes, self.resolved.initializer, self.resolved.init_scale, key)
    }

    fn batch(&self, key: RngKey) -> super::dataset::Batch {
        self.dataset.minibatch(key, self.batch_rows, self.window)
    }

    fn non_finite(&self, step: u64) -> Error {
        Error::NonFiniteLoss {
            step,
            context: self.id.clone(),
        }
    }

    fn zero_grads(&self) -> Vec<Tensor> {
        self.shapes.iter().map(|s| Tensor::zeros(&s.shape)).collect()
    }

    fn eval_loss(&self, level: usize, params: &[Tensor], batch: &super::dataset::Batch) -> f64 {
        if level == 0 {
            return self.model.loss_grad(params, batch, None);
        }
        match &self.aug_state[level - 1] {
            AugState::Reparam(scales) => {
                let inner = divide(params, scales);
                self.eval_loss(level - 1, &inner, batch)
            }
            AugState::Plain => self.eval_loss(level - 1, params, batch),
        }
    }

    fn eval(
        &self,
        level: usize,
        params: &[Tensor],
        batch: &super::dataset::Batch,
        key: RngKey,
        ctx: &mut RunContext,
    ) -> (f64, Vec<Tensor>) {
        if level == 0 {
            let mut grads = self.zero_grads();
            let loss = self.model.loss_grad(params, batch, Some(&mut grads));
            return (loss, grads);
        }
        match (&self.resolved.augmentations[level - 1], &self.aug_state[level - 1]) {
            (Augmentation::Reparam { .. }, AugState::Reparam(scales)) => {
                let inner = divide(params, scales);
                let (loss, g) = self.eval(level - 1, &inner, batch, key, ctx);
                (loss, divide(&g, scales))
            }
            (Augmentation::GradNormalize, _) => {
                let (loss, mut g) = self.eval(level - 1, params, batch, key, ctx);
                let n = global_norm_all(&g);
                if n > 0.0 {
                    for t in &mut g {
                        t.data_mut().iter_mut().for_each(|v| *v /= n);
                    }
                }
                (loss, g)
            }
            (Augmentation::InnerEs { sigma, pairs }, _) => {
                let loss = self.eval_loss(level - 1, params, batch);
                let mut g = self.zero_grads();
                let base = key.fold_label("inner_es").fold_in(level as u64);
                let mut plus: Vec<Tensor> = params.to_vec();
                let mut minus: Vec<Tensor> = params.to_vec();
                for p in 0..*pairs {
                    let mut gen = base.fold_in(p as u64).generator();
                    let eps: Vec<Tensor> = self
                        .shapes
                        .iter()
                        .map(|s| {
                            let mut t = Tensor::zeros(&s.shape);
                            gen.fill_normal(t.data_mut());
                            t
                        })
                        .collect();
                    for ((pl, mi), (orig, e)) in plus.iter_mut().zip(&mut minus).zip(params.iter().zip(&eps)) {
                        for (((a, b), &o), &ev) in pl
                            .data_mut()
                            .iter_mut()
                            .zip(mi.data_mut().iter_mut())
                            .zip(orig.data())
                            .zip(e.data())
                        {
                            *a = o + sigma * ev;
                            *b = o - sigma * ev;
                        }
                    }
                    let lp = self.eval_loss(level - 1, &plus, batch);
                    let lm = self.eval_loss(level - 1, &minus, batch);
                    let w = (lp - lm) / (2.0 * sigma * *pairs as f64);
                    for (gt, e) in g.iter_mut().zip(&eps) {
                        for (gv, &ev) in gt.data_mut().iter_mut().zip(e.data()) {
                            *gv += w * ev;
                        }
                    }
                }
                (loss, g)
            }
            (Augmentation::Delayed { delay }, _) => {
                let (loss, g) = self.eval(level - 1, params, batch, key, ctx);
                if ctx.delay_queues.len() < self.aug_state.len() {
                    ctx.delay_queues.resize_with(self.aug_state.len(), VecDeque::new);
                }
                let q = &mut ctx.delay_queues[level - 1];
                q.push_back(g);
                // Until `delay` gradients have accumulated, the oldest one stands in.
                let out = if q.len() > *delay {
                    q.pop_front().expect("non-empty queue")
                } else {
                    q.front().expect("non-empty queue").clone()
                };
                (loss, out)
            }
            (Augmentation::BatchReduce { .. }, _) => self.eval(level - 1, params, batch, key, ctx),
            (Augmentation::Reparam { .. }, AugState::Plain) => unreachable!("reparam state built with task"),
        }
    }
}

fn divide(ts: &[Tensor], scales: &[Tensor]) -> Vec<Tensor> {
    ts.iter()
        .zip(scales)
        .map(|(t, c)| t.zip_map(c, |a, b| a / b).expect("scales match parameter shapes"))
        .collect()
}

fn reparam_scales(shapes: &[ParamShape], mode: ReparamMode, (lo, hi): (f64, f64), key: RngKey) -> Vec<Tensor> {
    let mut g = key.generator();
    match mode {
        ReparamMode::Global => {
            let c = g.log_uniform(lo, hi);
            shapes.iter().map(|s| Tensor::full(&s.shape, c)).collect()
        }
        ReparamMode::Tensor => shapes
            .iter()
            .map(|s| Tensor::full(&s.shape, g.log_uniform(lo, hi)))
            .collect(),
        ReparamMode::Parameter => shapes
            .iter()
            .map(|s| {
                let mut t = Tensor::zeros(&s.shape);
                t.data_mut().iter_mut().for_each(|v| *v = g.log_uniform(lo, hi));
                t
            })
            .collect(),
    }
}

/// Orthonormalize the shorter side of a `rows × cols` row-major matrix
/// with modified Gram-Schmidt.
fn orthogonal(rows: usize, cols: usize, g: &mut crate::numkit::RngStream) -> Vec<f64> {
    let (n, m) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    // n vectors of length m
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| g.normal()).collect();
        for _ in 0..2 {
            for u in &vecs {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (k, v) in vecs.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            if rows >= cols {
                out[j * cols + k] = x; // column k
            } else {
                out[k * cols + j] = x; // row k
            }
        }
    }
    out
}

pub fn init_tensors(shapes: &[ParamShape], init: Initializer, scale: f64, key: RngKey) -> Vec<Tensor> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut g = key.fold_in(i as u64).generator();
            let fan_in = s.fan_in.max(1) as f64;
            let data: Vec<f64> = match (init, s.matrix_dims()) {
                (Initializer::Orthogonal, Some((r, c))) => orthogonal(r, c, &mut g),
                (Initializer::Uniform, _) => {
                    let b = (3.0 / fan_in).sqrt();
                    (0..s.len()).map(|_| g.uniform(-b, b)).collect()
                }
                _ => {
                    let sd = (1.0 / fan_in).sqrt();
                    (0..s.len()).map(|_| sd * g.normal()).collect()
                }
            };
            Tensor::new(s.shape.clone(), data)
                .expect("shape by construction")
                .scale(scale)
        })
        .collect()
}

impl ParamShape {
    fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.shape.len() {
            0 | 1 => None,
            n => Some((self.len() / self.shape[n - 1], self.shape[n - 1])),
        }
    }
}

impl Problem for Task {
    fn name(&self) -> String {
        self.id.clone()
    }

    fn param_shapes(&self) -> &[ParamShape] {
        &self.shapes
    }

    fn init_params(&self, key: RngKey) -> Vec<Tensor> {
        let mut params = self.base_init(key);
        for st in &self.aug_state {
            if let AugState::Reparam(scales) = st {
                for (p, c) in params.iter_mut().zip(scales) {
                    *p = p.mul(c).expect("scales match parameter shapes");
                }
            }
        }
        params
    }

    fn loss_and_grad(&self, params: &[Tensor], batch_key: RngKey, ctx: &mut RunContext) -> Result<(f64, Vec<Tensor>)> {
        let batch = self.batch(batch_key);
        let (loss, grads) = self.eval(self.aug_state.len(), params, &batch, batch_key, ctx);
        let step = ctx.step;
        ctx.step += 1;
        if !loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
            return Err(self.non_finite(step));
        }
        Ok((loss, grads))
    }

    fn loss(&self, params: &[Tensor], batch_key: RngKey) -> Result<f64> {
        let batch = self.batch(batch_key);
        let loss = self.eval_loss(self.aug_state.len(), params, &batch);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(self.non_finite(0))
        }
    }

    fn family(&self) -> Option<Family> {
        Some(self.resolved.family)
    }

    fn monitor_kind(&self) -> Option<LossKind> {
        Some(Task::loss_kind(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_zoo::config::image_mlp_config;
    use crate::task_zoo::cfgtext::Value;

    #[test]
    fn orthogonal_square_gram_is_scaled_identity() {
        let shapes = vec![ParamShape::new("w", vec![6, 6], 6)];
        let w = &init_tensors(&shapes, Initializer::Orthogonal, 1.7, RngKey::new(4))[0];
        let d = w.data();
        for i in 0..6 {
            for j in 0..6 {
                let g: f64 = (0..6).map(|k| d[k * 6 + i] * d[k * 6 + j]).sum();
                let want = if i == j { 1.7 * 1.7 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "({i},{j}) {g}");
            }
        }
    }

    #[test]
    fn uniform_bound() {
        let shapes = vec![ParamShape::new("w", vec![10, 7], 10)];
        let w = &init_tensors(&shapes, Initializer::Uniform, 2.0, RngKey::new(1))[0];
        let b = 2.0 * (3.0f64 / 10.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn hand_normalization() {
        let c = LossKind::Classification { num_classes: 10 };
        assert!((hand_normalize_loss(c, 10f64.ln()) - 1.0).abs() < 1e-15);
        assert_eq!(hand_normalize_loss(c, f64::INFINITY), 10.0);
        assert!(hand_normalize_loss(LossKind::Reconstruction, 1.0).abs() < 1e-8);
    }

    #[test]
    fn delay_zero_matches_plain() {
        let base = image_mlp_config(&[5], 3, 4, 8, "synthetic:2");
        let mut p = crate::task_zoo::cfgtext::Map::new();
        p.insert("delay".into(), Value::Int(0));
        let delayed = base
            .clone()
            .with_augmentation(crate::task_zoo::config::AugmentationKind::DelayedGrads, p);
        let a = Task::from_config(&base).unwrap();
        let b = Task::from_config(&delayed).unwrap();
        let params = a.init_params(RngKey::new(1));
        let (mut ca, mut cb) = (RunContext::new(), RunContext::new());
        for s in 0..5 {
            let k = RngKey::new(7).fold_in(s);
            assert_eq!(
                a.loss_and_grad(&params, k, &mut ca).unwrap(),
                b.loss_and_grad(&params, k, &mut cb).unwrap()
            );
        }
    }
}
