use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{best_lr, lr_sweep_with, BaselineKind};
use crate::error::{Error, Result};
use crate::numkit::RngKey;
use crate::optimizer::Optimizer;
use crate::task_zoo::Problem;
use crate::train::{train, Trainer};
use crate::velo_net::{MetaParams, VeloOptimizer};

/// Steps that spend an example budget at a batch size (floor division).
pub fn steps_for_budget(examples: u64, batch: u64) -> Result<u64> {
    if batch == 0 || batch > examples {
        return Err(Error::Range(format!("batch {batch} does not fit an example budget of {examples}")));
    }
    Ok(examples / batch)
}

#[derive(Clone)]
pub enum SweepOptimizer {
    /// Tuned over the learning-rate grid; the cell is the best mean loss.
    Baseline(BaselineKind),
    /// A single run with fixed meta-parameters.
    Velo(Arc<MetaParams>),
}

impl SweepOptimizer {
    pub fn name(&self) -> String {
        match self {
            SweepOptimizer::Baseline(k) => k.name().to_string(),
            SweepOptimizer::Velo(_) => "velo".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSweepRow {
    pub optimizer: String,
    pub batch: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub best_lr: Option<f64>,
}

/// Fixed example budget, varying batch size. `make_task` builds the task
/// at a given batch size.
pub fn batch_sweep(
    make_task: &dyn Fn(usize) -> Result<Arc<dyn Problem>>,
    examples: u64,
    batch_sizes: &[usize],
    optimizers: &[SweepOptimizer],
    lrs: &[f64],
    seeds: &[u64],
) -> Result<Vec<BatchSweepRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty("batch sweep needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &b in batch_sizes {
        let steps = steps_for_budget(examples, b as u64)?;
        let task = make_task(b)?;
        for opt in optimizers {
            let (final_loss, best) = match opt {
                SweepOptimizer::Baseline(kind) => {
                    let curves = lr_sweep_with(*kind, lrs, task.as_ref(), steps, seeds, steps.max(1))?;
                    let (lr, loss) = best_lr(&curves, lrs, seeds.len());
                    (loss, Some(lr))
                }
                SweepOptimizer::Velo(theta) => {
                    let mut v = VeloOptimizer::new(theta.clone());
                    let c = train(task.as_ref(), &mut v, steps, seeds[0], steps.max(1))?;
                    (c.final_loss(), None)
                }
            };
            rows.push(BatchSweepRow {
                optimizer: opt.name(),
                batch: b,
                steps,
                final_loss,
                best_lr: best,
            });
        }
    }
    Ok(rows)
}

/// Mean |Δp| per tensor at every step of a learned-optimizer run.
pub fn probe_step_sizes(problem: &dyn Problem, theta: Arc<MetaParams>, steps: u64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut opt = VeloOptimizer::new(theta);
    opt.init(problem.param_shapes(), steps)?;
    let mut trainer = Trainer::new(problem, RngKey::new(seed));
    trainer.record_step_sizes = true;
    let mut records = Vec::new();
    trainer.run(&mut opt, steps, &mut records)?;
    Ok(records.into_iter().filter_map(|r| r.step_sizes).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_arithmetic() {
        assert_eq!(steps_for_budget(1 << 19, 1 << 16).unwrap(), 8);
        assert_eq!(steps_for_budget(1000, 10).unwrap(), 2 * steps_for_budget(1000, 20).unwrap());
        assert!(steps_for_budget(10, 11).is_err());
    }
}
