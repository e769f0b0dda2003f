//! Random task configurations with runtime-based rejection.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use super::activation::Activation;
use super::cfgtext::{Map, Value};
use super::config::{AugmentationKind, Family, Initializer, TaskConfig, INNER_ES_PAIRS, REPARAM_RANGES};
use super::task::{Problem, RunContext, Task};
use crate::error::{Error, Result};
use crate::numkit::{RngKey, RngStream};

/// Per-step time limits and their sampling weights. Weights need not sum
/// to one; they are normalized when drawing.
#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeThresholds {
    pub thresholds_s: Vec<f64>,
    pub weights: Vec<f64>,
    /// Sequence-model families are only eligible at or above this budget.
    pub sequence_min_s: f64,
}

impl RuntimeThresholds {
    /// Thresholds used for the original accelerator-scale distribution.
    pub fn reference() -> Self {
        Self {
            thresholds_s: vec![2e-5, 1e-4, 4e-4, 1e-3],
            weights: vec![0.65, 0.3, 0.1, 0.05],
            sequence_min_s: 1e-4,
        }
    }

    /// The same shape shifted to what a single CPU core manages.
    pub fn desk() -> Self {
        Self {
            thresholds_s: vec![1e-4, 5e-4, 2e-3, 5e-3],
            weights: vec![0.65, 0.3, 0.1, 0.05],
            sequence_min_s: 5e-4,
        }
    }

    pub fn sample(&self, key: RngKey) -> f64 {
        let i = key.generator().weighted_index(&self.weights);
        self.thresholds_s[i]
    }

    /// Family weights with sequence families masked out below their gate.
    pub fn family_weights(&self, budget_s: f64, base: &[(Family, f64)]) -> Vec<(Family, f64)> {
        base.iter()
            .map(|&(f, w)| {
                if f == Family::TinyByteLm && budget_s < self.sequence_min_s {
                    (f, 0.0)
                } else {
                    (f, w)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SamplerOptions {
    pub max_attempts: usize,
    /// Image dataset ids to draw from.
    pub image_datasets: Vec<String>,
    pub text_datasets: Vec<String>,
    pub num_classes: usize,
    pub augment: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            max_attempts: 64,
            image_datasets: (0..4).map(|i| format!("synthetic:{i}")).collect(),
            text_datasets: (0..2).map(|i| format!("text:{i}")).collect(),
            num_classes: 10,
            augment: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampledTask {
    pub config: TaskConfig,
    /// Median measured seconds per gradient evaluation; `None` when the
    /// budget was unbounded and no timing was needed.
    pub step_time_s: Option<f64>,
    pub attempts: usize,
}

fn int(v: usize) -> Value {
    Value::Int(v as i64)
}

fn log_uniform_int(g: &mut RngStream, lo: usize, hi: usize) -> usize {
    (g.log_uniform(lo as f64, hi as f64 + 1.0).floor() as usize).clamp(lo, hi)
}

fn pick<'a, T>(g: &mut RngStream, xs: &'a [T]) -> &'a T {
    &xs[g.below(xs.len() as u64) as usize]
}

fn sample_config(g: &mut RngStream, family: Family, opts: &SamplerOptions) -> TaskConfig {
    let mut st = Map::new();
    let mut dy = Map::new();
    dy.insert("initializer".into(), Value::Str(pick(g, &Initializer::NAMES).to_string()));
    dy.insert("init_scale".into(), Value::Float(g.uniform(0.5, 2.0)));
    st.insert("batch_size".into(), int(log_uniform_int(g, 4, 512)));
    match family {
        Family::ImageMlp | Family::ImageMlpAe => {
            let width = log_uniform_int(g, 8, 128);
            let layers = g.below(5) as usize;
            st.insert("hidden_sizes".into(), Value::List(vec![int(width); layers]));
            st.insert("image_size".into(), int(log_uniform_int(g, 4, 16)));
            st.insert("dataset".into(), Value::Str(pick(g, &opts.image_datasets).clone()));
            dy.insert("activation".into(), Value::Str(pick(g, &Activation::NAMES).to_string()));
            if family == Family::ImageMlp {
                st.insert("num_classes".into(), int(opts.num_classes));
            } else {
                dy.insert("log_loss".into(), Value::Bool(g.bernoulli(0.5)));
                dy.insert("center_data".into(), Value::Bool(g.bernoulli(0.5)));
                let c = *pick(g, &["none", "sigmoid", "tanh"]);
                dy.insert("constrain_output".into(), Value::Str(c.into()));
            }
        }
        Family::TinyByteLm => {
            st.insert("hidden_size".into(), int(log_uniform_int(g, 16, 64)));
            st.insert("seq_len".into(), int(log_uniform_int(g, 8, 32)));
            st.insert("dataset".into(), Value::Str(pick(g, &opts.text_datasets).clone()));
        }
    }
    let mut cfg = TaskConfig::new(family, st, dy);
    if opts.augment {
        cfg = sample_augmentations(g, cfg);
    }
    cfg
}

fn sample_augmentations(g: &mut RngStream, mut cfg: TaskConfig) -> TaskConfig {
    let mode = *pick(g, &[None, None, Some("global"), Some("global"), Some("tensor"), Some("tensor"), Some("parameter")]);
    if let Some(mode) = mode {
        let (lo, hi) = *pick(g, &REPARAM_RANGES);
        let mut p = Map::new();
        p.insert("mode".into(), Value::Str(mode.into()));
        p.insert("scale_min".into(), Value::Float(lo));
        p.insert("scale_max".into(), Value::Float(hi));
        p.insert("seed".into(), Value::Int((g.next_u64() >> 33) as i64));
        cfg = cfg.with_augmentation(AugmentationKind::ReparamWeights, p);
    }
    if g.bernoulli(0.08) {
        let mut p = Map::new();
        p.insert("sigma".into(), Value::Float(g.log_uniform(0.001, 0.1)));
        p.insert("pairs".into(), int(*pick(g, &INNER_ES_PAIRS)));
        cfg = cfg.with_augmentation(AugmentationKind::InnerEs, p);
    }
    if g.bernoulli(0.2) {
        let mut p = Map::new();
        p.insert("fraction".into(), Value::Float(g.uniform(0.01, 1.0)));
        cfg = cfg.with_augmentation(AugmentationKind::BatchReduce, p);
    }
    if g.bernoulli(0.05) {
        cfg = cfg.with_augmentation(AugmentationKind::GradNormalize, Map::new());
    }
    if g.bernoulli(0.05) {
        let mut p = Map::new();
        p.insert("delay".into(), int(log_uniform_int(g, 1, 8)));
        cfg = cfg.with_augmentation(AugmentationKind::DelayedGrads, p);
    }
    cfg
}

/// Median wall time of three gradient evaluations, memoized on the parts
/// of the config that change cost.
pub fn measured_step_time(cfg: &TaskConfig) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = cfg.static_key();
    if let Some(&t) = cache.lock().expect("timing cache poisoned").get(&key) {
        return Ok(t);
    }
    let task = Task::from_config(cfg)?;
    let params = task.init_params(RngKey::new(0));
    let mut ctx = RunContext::new();
    let mut times = [0.0; 3];
    for (i, t) in times.iter_mut().enumerate() {
        let start = Instant::now();
        // Divergence at init is irrelevant for timing.
        let _ = task.loss_and_grad(&params, RngKey::new(i as u64), &mut ctx);
        *t = start.elapsed().as_secs_f64();
    }
    times.sort_by(f64::total_cmp);
    let median = times[1];
    cache.lock().expect("timing cache poisoned").insert(key, median);
    Ok(median)
}

pub fn sample_task(key: RngKey, family_weights: &[(Family, f64)], time_budget_s: f64) -> Result<SampledTask> {
    sample_task_with(key, family_weights, time_budget_s, &SamplerOptions::default())
}

pub fn sample_task_with(
    key: RngKey,
    family_weights: &[(Family, f64)],
    time_budget_s: f64,
    opts: &SamplerOptions,
) -> Result<SampledTask> {
    if !(time_budget_s > 0.0) {
        return Err(Error::Range(format!("time budget must be positive, got {time_budget_s}")));
    }
    let weights: Vec<f64> = family_weights.iter().map(|&(_, w)| w.max(0.0)).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config("all family weights are zero".into()));
    }
    for attempt in 0..opts.max_attempts.max(1) {
        let mut g = key.fold_in(attempt as u64).generator();
        let family = family_weights[g.weighted_index(&weights)].0;
        let config = sample_config(&mut g, family, opts);
        if time_budget_s.is_infinite() {
            return Ok(SampledTask {
                config,
                step_time_s: None,
                attempts: attempt + 1,
            });
        }
        let t = measured_step_time(&config)?;
        if t <= time_budget_s {
            return Ok(SampledTask {
                config,
                step_time_s: Some(t),
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::RejectionExhausted {
        attempts: opts.max_attempts,
        budget_s: time_budget_s,
    })
}
