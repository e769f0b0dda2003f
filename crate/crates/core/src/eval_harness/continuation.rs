use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::{RngKey, Tensor};
use crate::opt_state::{init_state_with, OptimizerState};
use crate::optimizer::Optimizer;
use crate::task_zoo::{ParamShape, Problem};
use crate::train::{LearningCurve, Trainer};
use crate::velo_net::{MetaParams, VeloOptimizer};

/// How optimizer state is carried into a second training segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContinuationMode {
    /// Keep everything; `t` runs past the declared length.
    Naive,
    /// Fresh state for a new run of `T2` steps.
    FullReset,
    /// Keep accumulators and recurrent carry, restart `t` at 0 with `T = T2`.
    ResetSteps,
    /// Keep everything and extend the declared length to `T1 + T2`.
    IncreaseSteps,
}

impl ContinuationMode {
    pub const ALL: [ContinuationMode; 4] = [
        ContinuationMode::Naive,
        ContinuationMode::FullReset,
        ContinuationMode::ResetSteps,
        ContinuationMode::IncreaseSteps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContinuationMode::Naive => "naive",
            ContinuationMode::FullReset => "full_reset",
            ContinuationMode::ResetSteps => "reset_steps",
            ContinuationMode::IncreaseSteps => "increase_steps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown continuation mode {s:?}")))
    }
}

pub fn transform_state(
    state: &OptimizerState,
    mode: ContinuationMode,
    shapes: &[ParamShape],
    t1: u64,
    t2: u64,
) -> Result<OptimizerState> {
    Ok(match mode {
        ContinuationMode::Naive => state.clone(),
        ContinuationMode::FullReset => init_state_with(shapes, t2.max(1), state.spacing)?,
        ContinuationMode::ResetSteps => {
            let mut s = state.clone();
            s.t = 0;
            s.set_total_steps(t2.max(1));
            s
        }
        ContinuationMode::IncreaseSteps => {
            let mut s = state.clone();
            s.set_total_steps(t1 + t2);
            s
        }
    })
}

#[derive(Clone, Debug)]
pub struct ContinuationRun {
    pub curve: LearningCurve,
    /// Optimizer state at the end of the first segment.
    pub before: OptimizerState,
    /// State the second segment starts from.
    pub after: OptimizerState,
    pub params_at_splice: Vec<Tensor>,
}

/// Train `t1` steps with the learned optimizer, transform its state per
/// `mode`, then train `t2` more. The curve is step-contiguous across the
/// splice.
pub fn continuation(
    problem: &dyn Problem,
    theta: Arc<MetaParams>,
    mode: ContinuationMode,
    t1: u64,
    t2: u64,
    seed: u64,
) -> Result<ContinuationRun> {
    if t1 == 0 {
        return Err(Error::Range("first segment needs at least one step".into()));
    }
    let mut opt = VeloOptimizer::new(theta);
    opt.init(problem.param_shapes(), t1)?;
    let mut trainer = Trainer::new(problem, RngKey::new(seed));
    let mut curve = LearningCurve::new(problem.name(), format!("velo_{}", mode.name()), seed);
    trainer.run(&mut opt, t1, &mut curve.records)?;
    let before = opt.state.take().expect("initialized above");
    let after = transform_state(&before, mode, problem.param_shapes(), t1, t2)?;
    opt.state = Some(after.clone());
    let params_at_splice = trainer.params.clone();
    trainer.run(&mut opt, t2, &mut curve.records)?;
    trainer.finish(&mut curve.records);
    Ok(ContinuationRun {
        curve,
        before,
        after,
        params_at_splice,
    })
}
