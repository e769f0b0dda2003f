//! Inner training loop shared by baselines, meta-training and evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{RngKey, Tensor};
use crate::optimizer::Optimizer;
use crate::task_zoo::{Problem, RunContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub step: u64,
    /// Training loss; `+∞` once the run has diverged.
    #[serde(with = "inf_float")]
    pub loss: f64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_sizes: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub task_id: String,
    pub optimizer_id: String,
    pub seed: u64,
    pub records: Vec<CurveRecord>,
}

impl LearningCurve {
    pub fn new(task_id: impl Into<String>, optimizer_id: impl Into<String>, seed: u64) -> Self {
        Self {
            task_id: task_id.into(),
            optimizer_id: optimizer_id.into(),
            seed,
            records: Vec::new(),
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.loss)
    }

    pub fn final_step(&self) -> u64 {
        self.records.last().map_or(0, |r| r.step)
    }

    pub fn steps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.step).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn diverged(&self) -> bool {
        self.records.iter().any(|r| r.loss.is_infinite())
    }

    /// Steps strictly increasing and losses finite or `+∞`.
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Config(format!(
                    "curve {}/{}: step {} follows {}",
                    self.task_id, self.optimizer_id, w[1].step, w[0].step
                )));
            }
        }
        if let Some(r) = self.records.iter().find(|r| r.loss.is_nan() || r.loss == f64::NEG_INFINITY) {
            return Err(Error::Config(format!("curve {}: invalid loss at step {}", self.task_id, r.step)));
        }
        Ok(())
    }
}

/// JSON has no infinity; `+∞` is written as the string `"inf"`.
mod inf_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

pub fn init_key(run_key: RngKey) -> RngKey {
    run_key.fold_label("init")
}

/// Minibatch key for step `step` of a run.
pub fn batch_key(run_key: RngKey, step: u64) -> RngKey {
    run_key.fold_label("batch").fold_in(step)
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFiniteLoss { .. } | Error::NonFiniteFeature { .. })
}

/// Owns the inner parameters of one run and advances them with any
/// optimizer. Divergence is absorbing: later records carry `+∞`.
pub struct Trainer<'a> {
    pub problem: &'a dyn Problem,
    pub params: Vec<Tensor>,
    pub ctx: RunContext,
    pub run_key: RngKey,
    /// Steps taken so far in this run.
    pub step: u64,
    pub diverged: bool,
    pub record_every: u64,
    pub record_step_sizes: bool,
    start: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(problem: &'a dyn Problem, run_key: RngKey) -> Self {
        let params = problem.init_params(init_key(run_key));
        Self {
            problem,
            params,
            ctx: RunContext::new(),
            run_key,
            step: 0,
            diverged: false,
            record_every: 1,
            record_step_sizes: false,
            start: Instant::now(),
        }
    }

    pub fn record_every(mut self, every: u64) -> Self {
        self.record_every = every.max(1);
        self
    }

    fn push(&self, out: &mut Vec<CurveRecord>, loss: f64, step_sizes: Option<Vec<f64>>) {
        out.push(CurveRecord {
            step: self.step,
            loss,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            step_sizes: if self.record_step_sizes { step_sizes } else { None },
        });
    }

    /// Take `n` optimizer steps, recording the pre-update minibatch loss
    /// every `record_every` steps.
    pub fn run(&mut self, opt: &mut dyn Optimizer, n: u64, out: &mut Vec<CurveRecord>) -> Result<()> {
        for _ in 0..n {
            let record = self.step.is_multiple_of(self.record_every);
            if self.diverged {
                if record {
                    self.push(out, f64::INFINITY, None);
                }
                self.step += 1;
                continue;
            }
            let key = batch_key(self.run_key, self.step);
            let (loss, grads) = match self.problem.loss_and_grad(&self.params, key, &mut self.ctx) {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => {
                    self.diverged = true;
                    if record {
                        self.push(out, f64::INFINITY, None);
                    }
                    self.step += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let report = match opt.step(&mut self.params, &grads, loss) {
                Ok(r) => r,
                Err(e) if is_divergence(&e) => {
                    self.diverged = true;
                    Default::default()
                }
                Err(e) => return Err(e),
            };
            if record {
                self.push(out, loss, report.step_sizes);
            }
            self.step += 1;
        }
        Ok(())
    }

    /// Loss at the current parameters on the batch for the current step.
    pub fn current_loss(&self) -> f64 {
        if self.diverged {
            return f64::INFINITY;
        }
        match self.problem.loss(&self.params, batch_key(self.run_key, self.step)) {
            Ok(l) if l.is_finite() => l,
            _ => f64::INFINITY,
        }
    }

    /// Append the loss after the last update as the closing record.
    pub fn finish(&mut self, out: &mut Vec<CurveRecord>) {
        let loss = self.current_loss();
        if loss.is_infinite() {
            self.diverged = true;
        }
        self.push(out, loss, None);
    }
}

/// Initialize `opt` for `steps` updates and train from a fresh init,
/// returning the full curve including the closing record.
pub fn train(
    problem: &dyn Problem,
    opt: &mut dyn Optimizer,
    steps: u64,
    seed: u64,
    record_every: u64,
) -> Result<LearningCurve> {
    opt.init(problem.param_shapes(), steps)?;
    let mut trainer = Trainer::new(problem, RngKey::new(seed)).record_every(record_every);
    let mut curve = LearningCurve::new(problem.name(), opt.name(), seed);
    trainer.run(opt, steps, &mut curve.records)?;
    trainer.finish(&mut curve.records);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_loss_serializes_as_string() {
        let r = CurveRecord {
            step: 3,
            loss: f64::INFINITY,
            wall_time_s: 0.5,
            step_sizes: None,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"inf\""), "{s}");
        let back: CurveRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
