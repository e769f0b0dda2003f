//! Hand-designed optimizers and learning-rate sweeps.

use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::optimizer::{Optimizer, StepReport};
use crate::task_zoo::cfgtext::{Map, MapReader};
use crate::task_zoo::{ParamShape, Problem};
use crate::train::{train, LearningCurve};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Sgd,
    Sgdm,
    Adam,
    RmsProp,
    AdaGrad,
    AdamW,
    NAdamW,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Sgd,
        BaselineKind::Sgdm,
        BaselineKind::Adam,
        BaselineKind::RmsProp,
        BaselineKind::AdaGrad,
        BaselineKind::AdamW,
        BaselineKind::NAdamW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Sgd => "sgd",
            BaselineKind::Sgdm => "sgdm",
            BaselineKind::Adam => "adam",
            BaselineKind::RmsProp => "rmsprop",
            BaselineKind::AdaGrad => "adagrad",
            BaselineKind::AdamW => "adamw",
            BaselineKind::NAdamW => "nadamw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown optimizer kind {s:?}")))
    }

    fn slots(self) -> usize {
        match self {
            BaselineKind::Sgd => 0,
            BaselineKind::Sgdm | BaselineKind::RmsProp | BaselineKind::AdaGrad => 1,
            BaselineKind::Adam | BaselineKind::AdamW | BaselineKind::NAdamW => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// Linear warmup over `warmup_frac · T` steps, then cosine decay to 0.
    WarmupCosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub schedule: Schedule,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind, lr: f64) -> Self {
        let (beta2, schedule) = match kind {
            BaselineKind::RmsProp => (0.99, Schedule::Constant),
            BaselineKind::NAdamW => (0.999, Schedule::WarmupCosine),
            _ => (0.999, Schedule::Constant),
        };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
            warmup_frac: 0.0,
            schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Range(format!("lr must be positive, got {}", self.lr)));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) || !beta_ok(self.momentum) {
            return Err(Error::Range(format!(
                "betas must lie in [0, 1): beta1={} beta2={} momentum={}",
                self.beta1, self.beta2, self.momentum
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Range(format!("eps must be positive, got {}", self.eps)));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || self.weight_decay < 0.0 {
            return Err(Error::Range("warmup_frac must lie in [0, 1) and weight_decay be ≥ 0".into()));
        }
        Ok(())
    }

    /// Read a spec from a config map: `kind`, `lr` and optional overrides.
    pub fn from_map(map: &Map) -> Result<Self> {
        let r = MapReader::new(map, "baseline");
        let kind = BaselineKind::parse(r.str("kind")?)?;
        let mut spec = Self::new(kind, r.f64("lr")?);
        let fields: [(&str, &mut f64); 6] = [
            ("beta1", &mut spec.beta1),
            ("beta2", &mut spec.beta2),
            ("eps", &mut spec.eps),
            ("momentum", &mut spec.momentum),
            ("weight_decay", &mut spec.weight_decay),
            ("warmup_frac", &mut spec.warmup_frac),
        ];
        for (key, slot) in fields {
            if let Some(v) = r.opt_f64(key)? {
                *slot = v;
            }
        }
        if let Some(s) = r.opt_str("schedule")? {
            spec.schedule = match s {
                "constant" => Schedule::Constant,
                "warmup_cosine" => Schedule::WarmupCosine,
                other => return Err(Error::Config(format!("unknown schedule {other:?}"))),
            };
        }
        r.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn id(&self) -> String {
        format!("{}_lr{:.3e}", self.kind.name(), self.lr)
    }
}

/// Learning-rate multiplier at step `t` (0-based) of a `total`-step run.
pub fn schedule_factor(schedule: Schedule, warmup_frac: f64, t: u64, total: u64) -> f64 {
    match schedule {
        Schedule::Constant => 1.0,
        Schedule::WarmupCosine => {
            let (t, total) = (t as f64, total.max(1) as f64);
            let w = warmup_frac * total;
            if t < w {
                t / w
            } else if t >= total {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (t - w) / (total - w)).cos())
            }
        }
    }
}

/// Per-tensor slot buffers (momentum, second moment) for one optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineState {
    pub slots: Vec<Vec<Vec<f64>>>,
    /// Updates applied so far.
    pub t: u64,
}

impl BaselineState {
    pub fn new(kind: BaselineKind, shapes: &[ParamShape]) -> Self {
        Self {
            slots: shapes.iter().map(|s| vec![vec![0.0; s.len()]; kind.slots()]).collect(),
            t: 0,
        }
    }
}

/// One update of `params` in place. `t` is read from `state`; `total` is
/// the run length used by the schedule.
pub fn baseline_step(
    spec: &BaselineSpec,
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut BaselineState,
    total: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.slots.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} state tensors",
            params.len(),
            grads.len(),
            state.slots.len()
        )));
    }
    let lr = spec.lr * schedule_factor(spec.schedule, spec.warmup_frac, state.t, total);
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (spec.beta1, spec.beta2, spec.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for ((p, g), slots) in params.iter_mut().zip(grads).zip(&mut state.slots) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
        let p = p.data_mut();
        let g = g.data();
        match spec.kind {
            BaselineKind::Sgd => {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= lr * gv;
                }
            }
            BaselineKind::Sgdm => {
                let buf = &mut slots[0];
                for ((pv, gv), b) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
                    *b = spec.momentum * *b + gv;
                    *pv -= lr * *b;
                }
            }
            BaselineKind::RmsProp => {
                let v = &mut slots[0];
                for ((pv, gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                    *pv -= lr * gv / (vv.sqrt() + eps);
                }
            }
            BaselineKind::AdaGrad => {
                let v = &mut slots[0];
                for ((pv, gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vv += gv * gv;
                    *pv -= lr * gv / (vv.sqrt() + eps);
                }
            }
            BaselineKind::Adam | BaselineKind::AdamW | BaselineKind::NAdamW => {
                let decay = if spec.kind == BaselineKind::Adam {
                    1.0
                } else {
                    1.0 - lr * spec.weight_decay
                };
                let nesterov = spec.kind == BaselineKind::NAdamW;
                let (m, v) = slots.split_at_mut(1);
                let (m, v) = (&mut m[0], &mut v[0]);
                for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mv = b1 * *mv + (1.0 - b1) * gv;
                    *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                    let m_hat = if nesterov {
                        (b1 * *mv + (1.0 - b1) * gv) / bc1
                    } else {
                        *mv / bc1
                    };
                    let v_hat = *vv / bc2;
                    *pv = *pv * decay - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

pub struct BaselineOptimizer {
    pub spec: BaselineSpec,
    pub state: Option<BaselineState>,
    pub total_steps: u64,
}

impl BaselineOptimizer {
    pub fn new(spec: BaselineSpec) -> Self {
        Self {
            spec,
            state: None,
            total_steps: 1,
        }
    }
}

impl Optimizer for BaselineOptimizer {
    fn name(&self) -> String {
        self.spec.id()
    }

    fn init(&mut self, shapes: &[ParamShape], total_steps: u64) -> Result<()> {
        self.spec.validate()?;
        self.state = Some(BaselineState::new(self.spec.kind, shapes));
        self.total_steps = total_steps;
        Ok(())
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], _loss: f64) -> Result<StepReport> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Config("optimizer stepped before init".into()))?;
        baseline_step(&self.spec, params, grads, state, self.total_steps)?;
        Ok(StepReport {
            applied: true,
            step_sizes: None,
        })
    }
}

/// `10^{k/2}` for fifteen consecutive `k`, covering `[1e-5, 10]`.
pub fn lr_grid() -> Vec<f64> {
    (-11..=3).map(|k| 10f64.powf(k as f64 / 2.0)).collect()
}

/// Every `(lr, seed)` run of one optimizer kind; diverged runs keep their
/// `+∞` tail and never abort the sweep.
pub fn lr_sweep(kind: BaselineKind, problem: &dyn Problem, steps: u64, seeds: &[u64]) -> Result<Vec<LearningCurve>> {
    lr_sweep_with(kind, &lr_grid(), problem, steps, seeds, 1)
}

pub fn lr_sweep_with(
    kind: BaselineKind,
    lrs: &[f64],
    problem: &dyn Problem,
    steps: u64,
    seeds: &[u64],
    record_every: u64,
) -> Result<Vec<LearningCurve>> {
    if seeds.is_empty() {
        return Err(Error::Empty("lr sweep needs at least one seed".into()));
    }
    let mut out = Vec::with_capacity(lrs.len() * seeds.len());
    for &lr in lrs {
        for &seed in seeds {
            let mut opt = BaselineOptimizer::new(BaselineSpec::new(kind, lr));
            out.push(train(problem, &mut opt, steps, seed, record_every)?);
        }
    }
    Ok(out)
}

/// Best learning rate by mean final loss over seeds; returns `(lr, mean)`.
pub fn best_lr(curves: &[LearningCurve], lrs: &[f64], seeds: usize) -> (f64, f64) {
    let mut best = (lrs[0], f64::INFINITY);
    for (i, &lr) in lrs.iter().enumerate() {
        let runs = &curves[i * seeds..(i + 1) * seeds];
        let mean = runs.iter().map(LearningCurve::final_loss).sum::<f64>() / seeds as f64;
        if mean < best.1 {
            best = (lr, mean);
        }
    }
    best
}

/// Radical inverse of `i` in base `b` (Halton sequence coordinate).
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Quasi-random NAdamW search space over learning rate, `1-β1`, `1-β2`,
/// weight decay and warmup fraction.
pub fn nadamw_grid(points: usize) -> Vec<BaselineSpec> {
    let log_lerp = |u: f64, lo: f64, hi: f64| (lo.ln() + u * (hi.ln() - lo.ln())).exp();
    (1..=points as u64)
        .map(|i| {
            let u = [2, 3, 5, 7, 11].map(|b| radical_inverse(i, b));
            let mut s = BaselineSpec::new(BaselineKind::NAdamW, log_lerp(u[0], 1e-4, 1e-1));
            s.beta1 = 1.0 - log_lerp(u[1], 1e-2, 2e-1);
            s.beta2 = 1.0 - log_lerp(u[2], 1e-3, 1e-1);
            s.weight_decay = log_lerp(u[3], 1e-5, 1e-1);
            s.warmup_frac = 0.1 * u[4];
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_zoo::{Quadratic, RunContext};
    use crate::numkit::RngKey;

    #[test]
    fn adam_first_step_is_sign_sized() {
        let spec = BaselineSpec::new(BaselineKind::Adam, 0.01);
        let shapes = vec![ParamShape::new("x", vec![3], 3)];
        let mut st = BaselineState::new(spec.kind, &shapes);
        let mut p = vec![Tensor::vector(vec![0.0; 3])];
        let g = vec![Tensor::vector(vec![2.0, -0.5, 1e-3])];
        baseline_step(&spec, &mut p, &g, &mut st, 10).unwrap();
        for (pv, gv) in p[0].data().iter().zip(g[0].data()) {
            let want = -0.01 * gv / (gv.abs() + 1e-8);
            assert!((pv - want).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_is_exact() {
        let spec = BaselineSpec::new(BaselineKind::Sgd, 0.1);
        let shapes = vec![ParamShape::new("x", vec![2], 2)];
        let mut st = BaselineState::new(spec.kind, &shapes);
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        baseline_step(&spec, &mut p, &[Tensor::vector(vec![0.5, -1.0])], &mut st, 1).unwrap();
        assert_eq!(p[0].data(), &[1.0 - 0.1 * 0.5, 2.0 + 0.1]);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(schedule_factor(Schedule::WarmupCosine, 0.05, 0, 1000), 0.0);
        assert_eq!(schedule_factor(Schedule::WarmupCosine, 0.05, 1000, 1000), 0.0);
        assert_eq!(schedule_factor(Schedule::WarmupCosine, 0.05, 50, 1000), 1.0);
        assert_eq!(schedule_factor(Schedule::WarmupCosine, 0.0, 0, 1000), 1.0);
    }

    #[test]
    fn grid_neighbors() {
        let g = lr_grid();
        assert_eq!(g.len(), 15);
        assert!(g[0] <= 1e-5 && *g.last().unwrap() >= 10.0);
        let i = g.iter().position(|&v| (v - 1e-3).abs() < 1e-15).unwrap();
        assert!((g[i + 1] - 3.1623e-3).abs() < 1e-7);
    }

    #[test]
    fn sgd_descends_on_quadratic() {
        let q = Quadratic::log_spaced(8, 100.0);
        let spec = BaselineSpec::new(BaselineKind::Sgd, 1.9);
        let mut st = BaselineState::new(spec.kind, q.param_shapes());
        let mut p = q.init_params(RngKey::new(0));
        let mut ctx = RunContext::new();
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let (l, g) = q.loss_and_grad(&p, RngKey::new(1), &mut ctx).unwrap();
            assert!(l <= prev);
            prev = l;
            baseline_step(&spec, &mut p, &g, &mut st, 50).unwrap();
        }
    }

    #[test]
    fn spec_from_map_rejects_unknown_and_bad_values() {
        use crate::task_zoo::cfgtext::Value;
        let mut m = Map::new();
        m.insert("kind".into(), Value::Str("adamw".into()));
        m.insert("lr".into(), Value::Float(1e-3));
        m.insert("weight_decay".into(), Value::Float(0.01));
        let s = BaselineSpec::from_map(&m).unwrap();
        assert_eq!((s.kind, s.weight_decay), (BaselineKind::AdamW, 0.01));
        m.insert("beta1".into(), Value::Float(1.0));
        assert!(BaselineSpec::from_map(&m).is_err());
        m.remove("beta1");
        m.insert("bogus".into(), Value::Int(1));
        assert!(matches!(BaselineSpec::from_map(&m), Err(Error::UnknownKey { .. })));
    }

    #[test]
    fn sweep_counts_and_best_lr() {
        let q = Quadratic::log_spaced(4, 10.0);
        let lrs = lr_grid();
        let curves = lr_sweep(BaselineKind::Sgd, &q, 20, &[0, 1]).unwrap();
        assert_eq!(curves.len(), 30);
        let (lr, best) = best_lr(&curves, &lrs, 2);
        for i in 0..lrs.len() {
            let m = (curves[2 * i].final_loss() + curves[2 * i + 1].final_loss()) / 2.0;
            assert!(best <= m);
        }
        assert!(lr > 0.0);
    }
}
