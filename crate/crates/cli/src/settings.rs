//! One config document drives every subcommand. Each section is an
//! optional top-level block; `family` blocks list the tasks.
//!
//! ```text
//! meta_train { outer_steps = 50  batch = 8  pairs = 1  max_steps = 20 }
//! sweep { optimizers = ["adam", "sgdm"]  steps = 100  seeds = [0, 1] }
//! family "ImageMLP" {
//!   static { hidden_sizes = [32]  image_size = 8  batch_size = 32  num_classes = 10  dataset = "synthetic:0" }
//!   dynamic { activation = "relu"  initializer = "normal"  init_scale = 1.0 }
//! }
//! ```

use std::path::Path;

use velo_core::baselines::BaselineKind;
use velo_core::eval_harness::{ContinuationMode, DEFAULT_EMA_DECAY};
use velo_core::meta_es::{
    Curriculum, MetaTrainConfig, UnrollSchedule, DEFAULT_BATCH, DEFAULT_OUTER_LR, DEFAULT_PAIRS, DEFAULT_SIGMA,
};
use velo_core::task_zoo::cfgtext::{parse_document, Block, Map, MapReader};
use velo_core::task_zoo::TaskConfig;
use velo_core::velo_net::Dims;
use velo_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetaSection {
    pub sigma: f64,
    pub pairs: usize,
    pub batch: usize,
    pub outer_lr: f64,
    pub outer_steps: u64,
    pub min_steps: u64,
    pub max_steps: u64,
    /// Linear unroll-length ramp over this many outer steps; 0 keeps it
    /// at `max_steps` throughout.
    pub ramp_steps: u64,
    pub time_budget_s: Option<f64>,
    pub hidden: usize,
    pub bank: usize,
    pub eval_batches: usize,
    pub checkpoint_every: u64,
    pub staleness_limit: u64,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            pairs: DEFAULT_PAIRS,
            batch: DEFAULT_BATCH,
            outer_lr: DEFAULT_OUTER_LR,
            outer_steps: 100,
            min_steps: 10,
            max_steps: 100,
            ramp_steps: 0,
            time_budget_s: None,
            hidden: 64,
            bank: 8,
            eval_batches: 1,
            checkpoint_every: 10,
            staleness_limit: 10,
        }
    }
}

impl MetaSection {
    fn read(map: &Map) -> Result<Self> {
        let d = Self::default();
        let r = MapReader::new(map, "meta_train");
        let u = |k, lo, hi, def: usize| r.opt_usize_in(k, lo, hi).map(|v| v.unwrap_or(def));
        let s = Self {
            sigma: r.opt_f64("sigma")?.unwrap_or(d.sigma),
            pairs: u("pairs", 1, 1 << 20, d.pairs)?,
            batch: u("batch", 1, 1 << 20, d.batch)?,
            outer_lr: r.opt_f64("outer_lr")?.unwrap_or(d.outer_lr),
            outer_steps: u("outer_steps", 0, usize::MAX >> 1, d.outer_steps as usize)? as u64,
            min_steps: u("min_steps", 1, usize::MAX >> 1, d.min_steps as usize)? as u64,
            max_steps: u("max_steps", 1, usize::MAX >> 1, d.max_steps as usize)? as u64,
            ramp_steps: u("ramp_steps", 0, usize::MAX >> 1, 0)? as u64,
            time_budget_s: r.opt_f64("time_budget_s")?,
            hidden: u("hidden", 1, 4096, d.hidden)?,
            bank: u("bank", 1, 1024, d.bank)?,
            eval_batches: u("eval_batches", 1, 1024, d.eval_batches)?,
            checkpoint_every: u("checkpoint_every", 0, usize::MAX >> 1, d.checkpoint_every as usize)? as u64,
            staleness_limit: u("staleness_limit", 0, usize::MAX >> 1, d.staleness_limit as usize)? as u64,
        };
        r.finish()?;
        if !(s.sigma > 0.0 && s.outer_lr > 0.0) {
            return Err(Error::Range("meta_train: sigma and outer_lr must be positive".into()));
        }
        Ok(s)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.hidden, self.bank)
    }

    pub fn train_config(&self, seed: u64) -> Result<MetaTrainConfig> {
        let schedule = if self.ramp_steps > 0 {
            UnrollSchedule::LinearRamp {
                ramp_steps: self.ramp_steps,
            }
        } else {
            UnrollSchedule::Constant
        };
        let curriculum = Curriculum {
            schedule,
            min_steps: self.min_steps.min(self.max_steps),
            max_steps: self.max_steps,
            time_budget: self.time_budget_s.map(|t| vec![(0, t)]).unwrap_or_default(),
        };
        curriculum.validate()?;
        Ok(MetaTrainConfig {
            sigma: self.sigma,
            pairs: self.pairs,
            batch: self.batch,
            outer_lr: self.outer_lr,
            outer_steps: self.outer_steps,
            curriculum,
            eval_batches: self.eval_batches,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerSection {
    pub worker_id: u64,
    pub cache_size: usize,
    pub resample_after: u64,
    pub resample_prob: f64,
    /// 0 runs until the learner goes away.
    pub max_gradients: u64,
}

impl Default for WorkerSection {
    fn default() -> Self {
        Self {
            worker_id: 0,
            cache_size: 8,
            resample_after: 16,
            resample_prob: 0.5,
            max_gradients: 0,
        }
    }
}

impl WorkerSection {
    fn read(map: &Map) -> Result<Self> {
        let d = Self::default();
        let r = MapReader::new(map, "worker");
        let s = Self {
            worker_id: r.opt_usize_in("worker_id", 0, usize::MAX >> 1)?.unwrap_or(0) as u64,
            cache_size: r.opt_usize_in("cache_size", 1, 4096)?.unwrap_or(d.cache_size),
            resample_after: r.opt_usize_in("resample_after", 1, usize::MAX >> 1)?.unwrap_or(16) as u64,
            resample_prob: r.opt_f64("resample_prob")?.unwrap_or(d.resample_prob),
            max_gradients: r.opt_usize_in("max_gradients", 0, usize::MAX >> 1)?.unwrap_or(0) as u64,
        };
        r.check_range("resample_prob", s.resample_prob, 0.0, 1.0)?;
        r.finish()?;
        Ok(s)
    }
}

fn kinds(names: &[String]) -> Result<Vec<BaselineKind>> {
    names.iter().map(|n| BaselineKind::parse(n)).collect()
}

fn seeds(r: &MapReader, def: &[u64]) -> Result<Vec<u64>> {
    match r.opt_f64_list("seeds")? {
        None => Ok(def.to_vec()),
        Some(v) => v
            .into_iter()
            .map(|x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as u64)
                } else {
                    Err(Error::Range(format!("seed {x} is not a non-negative integer")))
                }
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSection {
    pub optimizers: Vec<BaselineKind>,
    /// `None` uses the default half-decade grid.
    pub lrs: Option<Vec<f64>>,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub record_every: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            optimizers: vec![BaselineKind::Adam],
            lrs: None,
            steps: 100,
            seeds: vec![0],
            record_every: 1,
        }
    }
}

impl SweepSection {
    fn read(map: &Map) -> Result<Self> {
        let d = Self::default();
        let r = MapReader::new(map, "sweep");
        let s = Self {
            optimizers: match r.opt_str_list("optimizers")? {
                Some(names) => kinds(&names)?,
                None => d.optimizers,
            },
            lrs: r.opt_f64_list("lrs")?,
            steps: r.opt_usize_in("steps", 1, usize::MAX >> 1)?.unwrap_or(100) as u64,
            seeds: seeds(&r, &d.seeds)?,
            record_every: r.opt_usize_in("record_every", 1, usize::MAX >> 1)?.unwrap_or(1) as u64,
        };
        r.finish()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub record_every: u64,
    /// Optimizer-id prefix of the curves being normalized.
    pub target: String,
    /// Optimizer-id prefix of the curves forming the envelope.
    pub baseline: String,
    pub ema_decay: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            steps: 100,
            seeds: vec![0],
            record_every: 1,
            target: "velo".into(),
            baseline: "adam".into(),
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }
}

impl EvalSection {
    fn read(map: &Map) -> Result<Self> {
        let d = Self::default();
        let r = MapReader::new(map, "evaluation");
        let s = Self {
            steps: r.opt_usize_in("steps", 1, usize::MAX >> 1)?.unwrap_or(100) as u64,
            seeds: seeds(&r, &d.seeds)?,
            record_every: r.opt_usize_in("record_every", 1, usize::MAX >> 1)?.unwrap_or(1) as u64,
            target: r.opt_str("target")?.unwrap_or("velo").to_string(),
            baseline: r.opt_str("baseline")?.unwrap_or("adam").to_string(),
            ema_decay: r.opt_f64("ema_decay")?.unwrap_or(d.ema_decay),
        };
        r.check_range("ema_decay", s.ema_decay, 0.0, 1.0)?;
        r.finish()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuationSection {
    pub modes: Vec<ContinuationMode>,
    pub t1: u64,
    pub t2: u64,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        Self {
            modes: ContinuationMode::ALL.to_vec(),
            t1: 50,
            t2: 50,
        }
    }
}

impl ContinuationSection {
    fn read(map: &Map) -> Result<Self> {
        let r = MapReader::new(map, "continuation");
        let s = Self {
            modes: match r.opt_str_list("modes")? {
                Some(names) => names.iter().map(|n| ContinuationMode::parse(n)).collect::<Result<_>>()?,
                None => ContinuationMode::ALL.to_vec(),
            },
            t1: r.opt_usize_in("t1", 1, usize::MAX >> 1)?.unwrap_or(50) as u64,
            t2: r.opt_usize_in("t2", 0, usize::MAX >> 1)?.unwrap_or(50) as u64,
        };
        r.finish()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSweepSection {
    pub examples: u64,
    pub batch_sizes: Vec<usize>,
    /// Baseline names, or `velo` for the learned optimizer.
    pub optimizers: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for BatchSweepSection {
    fn default() -> Self {
        Self {
            examples: 4096,
            batch_sizes: vec![8, 32, 128],
            optimizers: vec!["adam".into(), "velo".into()],
            seeds: vec![0],
        }
    }
}

impl BatchSweepSection {
    fn read(map: &Map) -> Result<Self> {
        let d = Self::default();
        let r = MapReader::new(map, "batch_sweep");
        let s = Self {
            examples: r.opt_usize_in("examples", 1, usize::MAX >> 1)?.unwrap_or(4096) as u64,
            batch_sizes: if map.contains_key("batch_sizes") {
                r.usize_list("batch_sizes", 1, 1 << 20)?
            } else {
                d.batch_sizes
            },
            optimizers: r.opt_str_list("optimizers")?.unwrap_or(d.optimizers),
            seeds: seeds(&r, &d.seeds)?,
        };
        r.finish()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingSection {
    pub params: Vec<usize>,
    pub reps: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            params: vec![1_000, 10_000, 100_000, 1_000_000],
            reps: 5,
        }
    }
}

impl TimingSection {
    fn read(map: &Map) -> Result<Self> {
        let d = Self::default();
        let r = MapReader::new(map, "timing");
        let s = Self {
            params: if map.contains_key("params") {
                r.usize_list("params", 1, 1 << 30)?
            } else {
                d.params
            },
            reps: r.opt_usize_in("reps", 1, 10_000)?.unwrap_or(d.reps),
        };
        r.finish()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub meta: MetaSection,
    pub worker: WorkerSection,
    pub sweep: SweepSection,
    pub eval: EvalSection,
    pub continuation: ContinuationSection,
    pub batch_sweep: BatchSweepSection,
    pub timing: TimingSection,
    pub tasks: Vec<TaskConfig>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        let mut seen: Vec<String> = Vec::new();
        for block in parse_document(text)? {
            if block.kind != "family" {
                if seen.contains(&block.kind) {
                    return Err(block.syntax_error(format!("duplicate `{}` block", block.kind)));
                }
                seen.push(block.kind.clone());
            }
            let map = || -> Result<Map> { section_map(&block) };
            match block.kind.as_str() {
                "family" => {
                    let cfg = TaskConfig::from_block(&block)?;
                    cfg.resolve()?;
                    s.tasks.push(cfg);
                }
                "meta_train" => s.meta = MetaSection::read(&map()?)?,
                "worker" => s.worker = WorkerSection::read(&map()?)?,
                "sweep" => s.sweep = SweepSection::read(&map()?)?,
                "evaluation" => s.eval = EvalSection::read(&map()?)?,
                "continuation" => s.continuation = ContinuationSection::read(&map()?)?,
                "batch_sweep" => s.batch_sweep = BatchSweepSection::read(&map()?)?,
                "timing" => s.timing = TimingSection::read(&map()?)?,
                other => {
                    return Err(Error::UnknownKey {
                        key: other.to_string(),
                        context: "config document".into(),
                    })
                }
            }
        }
        Ok(s)
    }

    /// Defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text)
            }
        }
    }
}

fn section_map(block: &Block) -> Result<Map> {
    if block.label.is_some() {
        return Err(block.syntax_error(format!("`{}` takes no label", block.kind)));
    }
    block.to_map()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_tasks() {
        let s = Settings::parse(
            r#"
            meta_train { outer_steps = 3  batch = 2  hidden = 8  bank = 2  max_steps = 12  min_steps = 4 }
            sweep { optimizers = ["adam", "sgd"]  lrs = [0.1, 0.01]  seeds = [1, 2] }
            continuation { modes = ["naive"]  t1 = 5  t2 = 0 }
            family "ImageMLP" {
              static { hidden_sizes = [4]  image_size = 4  batch_size = 8  num_classes = 10  dataset = "synthetic:0" }
              dynamic { activation = "relu"  initializer = "normal"  init_scale = 1.0 }
            }
            "#,
        )
        .unwrap();
        assert_eq!(s.meta.outer_steps, 3);
        assert_eq!(s.meta.dims(), Dims::new(8, 2));
        assert_eq!(s.sweep.optimizers, vec![BaselineKind::Adam, BaselineKind::Sgd]);
        assert_eq!(s.sweep.seeds, vec![1, 2]);
        assert_eq!(s.continuation.modes, vec![ContinuationMode::Naive]);
        assert_eq!(s.tasks.len(), 1);
        assert_eq!(s.eval, EvalSection::default());
    }

    #[test]
    fn unknown_keys_and_blocks_rejected() {
        assert!(Settings::parse("meta_train { sigmaa = 1 }").is_err());
        assert!(Settings::parse("plot { }").is_err());
        assert!(Settings::parse("sweep { }\nsweep { }").is_err());
        assert!(Settings::parse("sweep { optimizers = [\"lion\"] }").is_err());
    }
}
