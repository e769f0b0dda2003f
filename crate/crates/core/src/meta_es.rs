//! Meta-training by antithetic evolution strategies over a task
//! distribution, with per-task unit-norm aggregation and an outer Adam.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::RngKey;
use crate::task_zoo::{hand_normalize_loss, Problem};
use crate::train::Trainer;
use crate::velo_net::{Dims, MetaParams, UpdateConstants, VeloOptimizer};
use crate::optimizer::Optimizer;

pub const DEFAULT_SIGMA: f64 = 0.01;
pub const DEFAULT_PAIRS: usize = 8;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_OUTER_LR: f64 = 3e-4;
/// Non-finite meta-losses are replaced by this multiple of the worst
/// finite loss seen for the same family.
pub const NAN_PENALTY_FACTOR: f64 = 10.0;

/// Key for evaluation batch `i` at the end of an inner run.
pub fn eval_key(run_key: RngKey, i: usize) -> RngKey {
    run_key.fold_label("eval").fold_in(i as u64)
}

/// Final training loss after `steps` learned-optimizer updates, averaged
/// over `eval_batches` fresh batches. Divergence yields `+∞`; callers that
/// need a finite value go through [`PenaltyTracker`].
pub fn meta_loss(
    theta: Arc<MetaParams>,
    problem: &dyn Problem,
    key: RngKey,
    steps: u64,
    eval_batches: usize,
    consts: UpdateConstants,
) -> Result<f64> {
    if steps < 1 {
        return Err(Error::Range("inner run needs at least one step".into()));
    }
    let mut opt = VeloOptimizer::new(theta);
    opt.consts = consts;
    opt.init(problem.param_shapes(), steps)?;
    let mut trainer = Trainer::new(problem, key).record_every(u64::MAX);
    let mut sink = Vec::new();
    trainer.run(&mut opt, steps, &mut sink)?;
    if trainer.diverged {
        return Ok(f64::INFINITY);
    }
    let n = eval_batches.max(1);
    let mut total = 0.0;
    for i in 0..n {
        match problem.loss(&trainer.params, eval_key(key, i)) {
            Ok(l) if l.is_finite() => total += l,
            _ => return Ok(f64::INFINITY),
        }
    }
    Ok(total / n as f64)
}

/// Anything ES can differentiate: a scalar function of flat meta-parameters
/// given an inner key and unroll length.
pub trait MetaObjective: Send + Sync {
    fn dim(&self) -> usize;

    /// Bucket for the non-finite penalty.
    fn family(&self) -> String;

    fn task_id(&self) -> String;

    /// May return a non-finite value on divergence.
    fn evaluate(&self, theta: &[f64], key: RngKey, inner_steps: u64) -> f64;

    /// Loss rescaled into a family-independent range for logs.
    fn monitor(&self, _loss: f64) -> Option<f64> {
        None
    }
}

/// The learned optimizer trained on one inner problem.
pub struct VeloObjective {
    pub problem: Arc<dyn Problem>,
    pub dims: Dims,
    pub eval_batches: usize,
    pub consts: UpdateConstants,
}

impl VeloObjective {
    pub fn new(problem: Arc<dyn Problem>, dims: Dims) -> Self {
        Self {
            problem,
            dims,
            eval_batches: 1,
            consts: UpdateConstants::default(),
        }
    }
}

impl MetaObjective for VeloObjective {
    fn dim(&self) -> usize {
        crate::velo_net::param_count(self.dims)
    }

    fn family(&self) -> String {
        match self.problem.family() {
            Some(f) => f.name().to_string(),
            None => self.problem.name(),
        }
    }

    fn task_id(&self) -> String {
        self.problem.name()
    }

    fn evaluate(&self, theta: &[f64], key: RngKey, inner_steps: u64) -> f64 {
        let Ok(theta) = MetaParams::from_flat(self.dims, theta.to_vec()) else {
            return f64::NAN;
        };
        meta_loss(
            Arc::new(theta),
            self.problem.as_ref(),
            key,
            inner_steps,
            self.eval_batches,
            self.consts,
        )
        .unwrap_or(f64::NAN)
    }

    fn monitor(&self, loss: f64) -> Option<f64> {
        self.problem.monitor_kind().map(|k| hand_normalize_loss(k, loss))
    }
}

/// Worst finite meta-loss seen per family during a run.
#[derive(Debug, Default)]
pub struct PenaltyTracker {
    worst: Mutex<HashMap<String, f64>>,
}

impl PenaltyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&self, family: &str, loss: f64) {
        if !loss.is_finite() {
            return;
        }
        let mut w = self.worst.lock().expect("penalty tracker poisoned");
        let e = w.entry(family.to_string()).or_insert(loss);
        *e = e.max(loss);
    }

    /// `NAN_PENALTY_FACTOR` × worst finite loss, or `None` before any
    /// finite loss has been seen.
    pub fn penalty(&self, family: &str) -> Option<f64> {
        let w = self.worst.lock().expect("penalty tracker poisoned");
        w.get(family).map(|&v| NAN_PENALTY_FACTOR * v.abs().max(f64::MIN_POSITIVE))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGradient {
    pub theta_version: u64,
    /// Unit-norm direction, or all zeros when skipped.
    pub grad: Vec<f64>,
    pub task_id: String,
    pub inner_steps: u64,
    /// Mean meta-loss over both sides of every used pair.
    pub raw_meta_loss: f64,
    pub monitor_loss: Option<f64>,
    pub wall_time_s: f64,
    pub skipped: bool,
}

/// Pre-normalization ES estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct EsEstimate {
    pub grad: Vec<f64>,
    pub mean_loss: f64,
    pub pairs_used: usize,
}

/// Keys for antithetic pair `i`: the perturbation direction and the inner
/// randomness shared by both sides.
pub fn pair_keys(key: RngKey, pair: usize) -> (RngKey, RngKey) {
    (
        key.fold_label("es_noise").fold_in(pair as u64),
        key.fold_label("es_inner").fold_in(pair as u64),
    )
}

/// `(1/P) Σᵢ εᵢ (L(θ+σεᵢ) − L(θ−σεᵢ)) / 2σ` with both sides of each pair
/// evaluated under the same inner key.
pub fn es_estimate(
    obj: &dyn MetaObjective,
    theta: &[f64],
    key: RngKey,
    inner_steps: u64,
    sigma: f64,
    pairs: usize,
    penalty: &PenaltyTracker,
) -> Result<EsEstimate> {
    if !(sigma > 0.0) || pairs == 0 {
        return Err(Error::Range(format!("ES needs sigma > 0 and pairs ≥ 1, got {sigma}, {pairs}")));
    }
    let d = theta.len();
    let family = obj.family();
    let mut grad = vec![0.0; d];
    let mut eps = vec![0.0; d];
    let mut side = vec![0.0; d];
    let (mut loss_sum, mut used) = (0.0, 0usize);
    for i in 0..pairs {
        let (noise_key, inner_key) = pair_keys(key, i);
        noise_key.generator().fill_normal(&mut eps);
        for ((s, t), e) in side.iter_mut().zip(theta).zip(&eps) {
            *s = t + sigma * e;
        }
        let lp = obj.evaluate(&side, inner_key, inner_steps);
        for ((s, t), e) in side.iter_mut().zip(theta).zip(&eps) {
            *s = t - sigma * e;
        }
        let lm = obj.evaluate(&side, inner_key, inner_steps);
        penalty.observe(&family, lp);
        penalty.observe(&family, lm);
        let (lp, lm) = match (lp.is_finite(), lm.is_finite()) {
            (true, true) => (lp, lm),
            (false, false) => continue,
            _ => {
                let Some(p) = penalty.penalty(&family) else { continue };
                (if lp.is_finite() { lp } else { p }, if lm.is_finite() { lm } else { p })
            }
        };
        let coef = (lp - lm) / (2.0 * sigma);
        for (g, e) in grad.iter_mut().zip(&eps) {
            *g += coef * e;
        }
        loss_sum += lp + lm;
        used += 1;
    }
    grad.iter_mut().for_each(|g| *g /= pairs as f64);
    Ok(EsEstimate {
        grad,
        mean_loss: if used > 0 { loss_sum / (2 * used) as f64 } else { f64::INFINITY },
        pairs_used: used,
    })
}

/// Scale to unit length; zero vectors stay zero.
pub fn unit_normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    n
}

#[allow(clippy::too_many_arguments)]
pub fn es_gradient(
    obj: &dyn MetaObjective,
    theta: &[f64],
    theta_version: u64,
    key: RngKey,
    inner_steps: u64,
    sigma: f64,
    pairs: usize,
    penalty: &PenaltyTracker,
) -> Result<MetaGradient> {
    let start = Instant::now();
    let est = es_estimate(obj, theta, key, inner_steps, sigma, pairs, penalty)?;
    let mut grad = est.grad;
    let norm = unit_normalize(&mut grad);
    let skipped = est.pairs_used == 0 || !(norm > 0.0 && norm.is_finite());
    Ok(MetaGradient {
        theta_version,
        grad,
        task_id: obj.task_id(),
        inner_steps,
        raw_meta_loss: est.mean_loss,
        monitor_loss: obj.monitor(est.mean_loss),
        wall_time_s: start.elapsed().as_secs_f64(),
        skipped,
    })
}

/// Mean of the first `batch` non-skipped gradients.
pub fn aggregate(grads: &[MetaGradient], batch: usize) -> Result<Vec<f64>> {
    let usable: Vec<&MetaGradient> = grads.iter().filter(|g| !g.skipped).take(batch).collect();
    if usable.len() < batch || batch == 0 {
        return Err(Error::InsufficientBatch {
            needed: batch.max(1),
            available: usable.len(),
        });
    }
    let mut out = vec![0.0; usable[0].grad.len()];
    for g in &usable {
        for (o, v) in out.iter_mut().zip(&g.grad) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= batch as f64);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OuterAdam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step on `theta`.
pub fn outer_step(theta: &mut [f64], grad: &[f64], adam: &mut OuterAdam) {
    adam.t += 1;
    let t = adam.t as i32;
    let bc1 = 1.0 - adam.beta1.powi(t);
    let bc2 = 1.0 - adam.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * g;
        adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * g * g;
        theta[i] -= adam.lr * (adam.m[i] / bc1) / ((adam.v[i] / bc2).sqrt() + adam.eps);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnrollSchedule {
    Constant,
    /// Linear from `min_steps` to `max_steps` over `ramp_steps` outer steps.
    LinearRamp { ramp_steps: u64 },
    /// Three linear pieces through `(0, min)`, both knots and `(end, max)`.
    Piecewise3 { knots: [(u64, u64); 2], end: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub schedule: UnrollSchedule,
    pub min_steps: u64,
    pub max_steps: u64,
    /// `(from_outer_step, seconds)`; the last entry at or before the
    /// current step applies. Empty means unbounded.
    pub time_budget: Vec<(u64, f64)>,
}

fn lerp_u64(a: u64, b: u64, f: f64) -> u64 {
    (a as f64 + (b as f64 - a as f64) * f.clamp(0.0, 1.0)).round() as u64
}

impl Curriculum {
    pub fn constant(steps: u64) -> Self {
        Self {
            schedule: UnrollSchedule::Constant,
            min_steps: steps,
            max_steps: steps,
            time_budget: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_steps < 1 || self.max_steps < self.min_steps {
            return Err(Error::Range(format!(
                "unroll range [{}, {}] is empty",
                self.min_steps, self.max_steps
            )));
        }
        if let UnrollSchedule::Piecewise3 { knots, end } = &self.schedule {
            let ok = knots[0].0 <= knots[1].0
                && knots[1].0 <= *end
                && self.min_steps <= knots[0].1
                && knots[0].1 <= knots[1].1
                && knots[1].1 <= self.max_steps;
            if !ok {
                return Err(Error::Range("piecewise schedule knots must be non-decreasing".into()));
            }
        }
        Ok(())
    }

    pub fn current_max(&self, outer_step: u64) -> u64 {
        let (lo, hi) = (self.min_steps, self.max_steps);
        let v = match &self.schedule {
            UnrollSchedule::Constant => hi,
            UnrollSchedule::LinearRamp { ramp_steps } => {
                lerp_u64(lo, hi, outer_step as f64 / (*ramp_steps).max(1) as f64)
            }
            UnrollSchedule::Piecewise3 { knots, end } => {
                let pts = [(0, lo), knots[0], knots[1], (*end, hi)];
                let mut v = hi;
                for w in pts.windows(2) {
                    let ((s0, v0), (s1, v1)) = (w[0], w[1]);
                    if outer_step < s1 {
                        let f = if s1 > s0 { (outer_step.saturating_sub(s0)) as f64 / (s1 - s0) as f64 } else { 1.0 };
                        v = lerp_u64(v0, v1, f);
                        break;
                    }
                }
                v
            }
        };
        v.clamp(lo, hi)
    }

    pub fn time_budget_s(&self, outer_step: u64) -> f64 {
        self.time_budget
            .iter()
            .rfind(|(s, _)| *s <= outer_step)
            .map_or(f64::INFINITY, |&(_, b)| b)
    }

    /// Unroll length, log-uniform over `[min_steps, current_max]`, and the
    /// task time budget.
    pub fn sample(&self, outer_step: u64, key: RngKey) -> (u64, f64) {
        let hi = self.current_max(outer_step);
        let n = if hi <= self.min_steps {
            self.min_steps
        } else {
            let x = key
                .fold_label("unroll")
                .generator()
                .log_uniform(self.min_steps as f64, hi as f64);
            (x.round() as u64).clamp(self.min_steps, hi)
        };
        (n, self.time_budget_s(outer_step))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub sigma: f64,
    pub pairs: usize,
    pub batch: usize,
    pub outer_lr: f64,
    pub outer_steps: u64,
    pub curriculum: Curriculum,
    pub eval_batches: usize,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            pairs: DEFAULT_PAIRS,
            batch: DEFAULT_BATCH,
            outer_lr: DEFAULT_OUTER_LR,
            outer_steps: 100,
            curriculum: Curriculum::constant(100),
            eval_batches: 1,
            seed: 0,
        }
    }
}

/// One line of the meta-training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterLog {
    pub outer_step: u64,
    pub mean_meta_loss: f64,
    pub min_meta_loss: f64,
    pub max_meta_loss: f64,
    pub skipped: usize,
    pub monitor_loss: Option<f64>,
    pub wall_time_s: f64,
}

impl OuterLog {
    pub fn from_grads(outer_step: u64, grads: &[MetaGradient], wall_time_s: f64) -> Self {
        let finite: Vec<f64> = grads.iter().map(|g| g.raw_meta_loss).filter(|l| l.is_finite()).collect();
        let n = finite.len().max(1) as f64;
        let monitors: Vec<f64> = grads.iter().filter_map(|g| g.monitor_loss).collect();
        Self {
            outer_step,
            mean_meta_loss: finite.iter().sum::<f64>() / n,
            min_meta_loss: finite.iter().copied().fold(f64::INFINITY, f64::min),
            max_meta_loss: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            skipped: grads.iter().filter(|g| g.skipped).count(),
            monitor_loss: (!monitors.is_empty()).then(|| monitors.iter().sum::<f64>() / monitors.len() as f64),
            wall_time_s,
        }
    }
}

/// θ, its version and the outer optimizer state: the single mutator of
/// meta-training.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaLearner {
    pub theta: Vec<f64>,
    pub version: u64,
    pub adam: OuterAdam,
}

impl MetaLearner {
    pub fn new(theta: Vec<f64>, outer_lr: f64) -> Self {
        let adam = OuterAdam::new(theta.len(), outer_lr);
        Self { theta, version: 0, adam }
    }

    pub fn apply(&mut self, grads: &[MetaGradient], batch: usize) -> Result<()> {
        let g = aggregate(grads, batch)?;
        outer_step(&mut self.theta, &g, &mut self.adam);
        self.version += 1;
        Ok(())
    }
}

/// Key and task slot of the `index`-th meta-gradient of a run. Both the
/// synchronous loop and a single asynchronous worker walk this sequence.
pub fn gradient_slot(seed: u64, index: u64, num_tasks: usize) -> (RngKey, usize) {
    (worker_gradient_key(seed, 0, index), (index % num_tasks as u64) as usize)
}

/// Key of a worker's `seq`-th meta-gradient. Worker 0 shares the
/// synchronous sequence; other workers get disjoint streams.
pub fn worker_gradient_key(seed: u64, worker: u64, seq: u64) -> RngKey {
    let base = RngKey::new(seed).fold_label("meta_grad");
    let base = if worker == 0 { base } else { base.fold_label("worker").fold_in(worker) };
    base.fold_in(seq)
}

/// One meta-gradient against `theta` for `objective` under `key`; the
/// unroll length comes from the curriculum at `version`.
pub fn compute_with_key(
    cfg: &MetaTrainConfig,
    objective: &dyn MetaObjective,
    theta: &[f64],
    version: u64,
    key: RngKey,
    penalty: &PenaltyTracker,
) -> Result<MetaGradient> {
    let (n, _) = cfg.curriculum.sample(version, key);
    es_gradient(objective, theta, version, key, n, cfg.sigma, cfg.pairs, penalty)
}

/// Compute the `index`-th meta-gradient of a run against `theta`.
pub fn compute_slot(
    cfg: &MetaTrainConfig,
    objectives: &[Arc<dyn MetaObjective>],
    theta: &[f64],
    version: u64,
    index: u64,
    penalty: &PenaltyTracker,
) -> Result<MetaGradient> {
    let (key, slot) = gradient_slot(cfg.seed, index, objectives.len());
    compute_with_key(cfg, objectives[slot].as_ref(), theta, version, key, penalty)
}

/// Synchronous meta-training: per outer step, `batch` meta-gradients with
/// sequential keys, then one outer update. `on_step` sees the learner
/// after each update.
pub fn meta_train(
    cfg: &MetaTrainConfig,
    objectives: &[Arc<dyn MetaObjective>],
    theta0: Vec<f64>,
    mut on_step: impl FnMut(&MetaLearner, &OuterLog) -> Result<()>,
) -> Result<MetaLearner> {
    if objectives.is_empty() {
        return Err(Error::Empty("meta-training needs at least one task".into()));
    }
    cfg.curriculum.validate()?;
    let penalty = PenaltyTracker::new();
    let mut learner = MetaLearner::new(theta0, cfg.outer_lr);
    let mut index = 0u64;
    for _ in 0..cfg.outer_steps {
        let start = Instant::now();
        let mut grads = Vec::with_capacity(cfg.batch);
        while grads.iter().filter(|g: &&MetaGradient| !g.skipped).count() < cfg.batch {
            grads.push(compute_slot(cfg, objectives, &learner.theta, learner.version, index, &penalty)?);
            index += 1;
            if grads.len() > cfg.batch * 4 + 16 {
                break;
            }
        }
        let log = OuterLog::from_grads(learner.version, &grads, start.elapsed().as_secs_f64());
        learner.apply(&grads, cfg.batch)?;
        on_step(&learner, &log)?;
    }
    Ok(learner)
}

/// Meta-training restricted to a single task.
pub fn finetune(
    cfg: &MetaTrainConfig,
    objective: Arc<dyn MetaObjective>,
    theta0: Vec<f64>,
    on_step: impl FnMut(&MetaLearner, &OuterLog) -> Result<()>,
) -> Result<MetaLearner> {
    meta_train(cfg, &[objective], theta0, on_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant;
    impl MetaObjective for Constant {
        fn dim(&self) -> usize {
            5
        }
        fn family(&self) -> String {
            "const".into()
        }
        fn task_id(&self) -> String {
            "const".into()
        }
        fn evaluate(&self, _theta: &[f64], _key: RngKey, _n: u64) -> f64 {
            3.5
        }
    }

    #[test]
    fn constant_objective_gives_exact_zero() {
        let est = es_estimate(&Constant, &[0.1, -0.3, 2.0, 0.0, 1.0], RngKey::new(1), 1, 0.1, 50, &PenaltyTracker::new())
            .unwrap();
        assert!(est.grad.iter().all(|&g| g == 0.0));
        let g = es_gradient(&Constant, &[0.0; 5], 0, RngKey::new(1), 1, 0.1, 4, &PenaltyTracker::new()).unwrap();
        assert!(g.skipped);
    }

    #[test]
    fn aggregate_examples() {
        let mk = |v: Vec<f64>| MetaGradient {
            theta_version: 0,
            grad: v,
            task_id: String::new(),
            inner_steps: 1,
            raw_meta_loss: 1.0,
            monitor_loss: None,
            wall_time_s: 0.0,
            skipped: false,
        };
        assert_eq!(aggregate(&[mk(vec![0.6, 0.8])], 1).unwrap(), vec![0.6, 0.8]);
        assert_eq!(aggregate(&[mk(vec![1.0, 0.0]), mk(vec![-1.0, 0.0])], 2).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            aggregate(&[mk(vec![1.0])], 2),
            Err(Error::InsufficientBatch { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let mut theta = vec![1.0, -2.0];
        let mut adam = OuterAdam::new(2, DEFAULT_OUTER_LR);
        outer_step(&mut theta, &[0.0, 0.0], &mut adam);
        assert_eq!(theta, vec![1.0, -2.0]);
    }

    #[test]
    fn curriculum_examples() {
        let c = Curriculum::constant(2000);
        assert_eq!(c.sample(7, RngKey::new(0)).0, 2000);
        let ramp = Curriculum {
            schedule: UnrollSchedule::LinearRamp { ramp_steps: 1000 },
            min_steps: 200,
            max_steps: 20_000,
            time_budget: vec![(0, 1e-3), (500, 5e-3)],
        };
        assert_eq!(ramp.current_max(0), 200);
        assert_eq!(ramp.current_max(5000), 20_000);
        assert_eq!(ramp.time_budget_s(499), 1e-3);
        assert_eq!(ramp.time_budget_s(500), 5e-3);
        let pw = Curriculum {
            schedule: UnrollSchedule::Piecewise3 {
                knots: [(100, 1000), (200, 1500)],
                end: 400,
            },
            ..ramp
        };
        pw.validate().unwrap();
        let vals: Vec<u64> = (0..500).map(|s| pw.current_max(s)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((vals[0], vals[100], vals[200], vals[450]), (200, 1000, 1500, 20_000));
    }

    #[test]
    fn log_uniform_median() {
        let c = Curriculum {
            schedule: UnrollSchedule::Constant,
            min_steps: 200,
            max_steps: 20_000,
            time_budget: Vec::new(),
        };
        let mut v: Vec<u64> = (0..10_000).map(|i| c.sample(0, RngKey::new(i)).0).collect();
        v.sort_unstable();
        let med = v[5000] as f64;
        assert!((med / 2000.0 - 1.0).abs() < 0.1, "{med}");
    }

    #[test]
    fn penalty_uses_worst_finite() {
        let p = PenaltyTracker::new();
        assert_eq!(p.penalty("a"), None);
        p.observe("a", 2.0);
        p.observe("a", f64::NAN);
        p.observe("a", 1.0);
        assert_eq!(p.penalty("a"), Some(20.0));
    }
}
