//! Common stepping interface for learned and hand-designed optimizers,
//! plus the guard-rail wrapper.

use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::task_zoo::ParamShape;

/// What one call to [`Optimizer::step`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// `false` when the call only accumulated a gradient.
    pub applied: bool,
    /// Per-tensor mean |Δp|, when the optimizer records it.
    pub step_sizes: Option<Vec<f64>>,
}

pub trait Optimizer: Send {
    fn name(&self) -> String;

    /// Reset all state for a run of `total_steps` updates.
    fn init(&mut self, shapes: &[ParamShape], total_steps: u64) -> Result<()>;

    /// Apply one update in place: `params ← params − Δ`.
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], loss: f64) -> Result<StepReport>;
}

pub const MAX_DECLARED_STEPS: u64 = 150_000;

/// Gradient accumulation past a step budget and optional L2 weight decay,
/// wrapped around any optimizer.
pub struct GuardRails<O> {
    pub inner: O,
    /// Gradients averaged per applied update.
    pub accumulate: u64,
    /// Step count the inner optimizer is told about.
    pub declared_steps: u64,
    pub weight_decay: f64,
    pending: Vec<Tensor>,
    pending_loss: f64,
    count: u64,
}

/// Accumulation factor and declared length for a requested run length.
pub fn accumulation_plan(requested: u64, max_steps: u64) -> (u64, u64) {
    let requested = requested.max(1);
    let k = requested.div_ceil(max_steps.max(1));
    (k, requested.div_ceil(k))
}

/// Add `wd · p` to each gradient.
pub fn apply_weight_decay(grads: &[Tensor], params: &[Tensor], wd: f64) -> Vec<Tensor> {
    if wd == 0.0 {
        return grads.to_vec();
    }
    grads
        .iter()
        .zip(params)
        .map(|(g, p)| g.zip_map(p, |gv, pv| gv + wd * pv).expect("gradient matches parameter shape"))
        .collect()
}

impl<O: Optimizer> GuardRails<O> {
    pub fn new(inner: O, requested_steps: u64, max_steps: u64, weight_decay: f64) -> Self {
        let (accumulate, declared_steps) = accumulation_plan(requested_steps, max_steps);
        Self {
            inner,
            accumulate,
            declared_steps,
            weight_decay,
            pending: Vec::new(),
            pending_loss: 0.0,
            count: 0,
        }
    }
}

impl<O: Optimizer> Optimizer for GuardRails<O> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn init(&mut self, shapes: &[ParamShape], _total_steps: u64) -> Result<()> {
        self.pending.clear();
        self.count = 0;
        self.pending_loss = 0.0;
        self.inner.init(shapes, self.declared_steps)
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], loss: f64) -> Result<StepReport> {
        let g = apply_weight_decay(grads, params, self.weight_decay);
        if self.accumulate == 1 {
            return self.inner.step(params, &g, loss);
        }
        if self.pending.is_empty() {
            self.pending = g;
        } else {
            for (a, b) in self.pending.iter_mut().zip(&g) {
                a.axpy(1.0, b)
                    .map_err(|e| Error::Shape(format!("accumulated gradient: {e}")))?;
            }
        }
        self.pending_loss += loss;
        self.count += 1;
        if self.count < self.accumulate {
            return Ok(StepReport::default());
        }
        let k = self.count as f64;
        let mean: Vec<Tensor> = std::mem::take(&mut self.pending).iter().map(|t| t.scale(1.0 / k)).collect();
        let mean_loss = self.pending_loss / k;
        self.count = 0;
        self.pending_loss = 0.0;
        self.inner.step(params, &mean, mean_loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulation_arithmetic() {
        assert_eq!(accumulation_plan(300_000, MAX_DECLARED_STEPS), (2, 150_000));
        assert_eq!(accumulation_plan(150_000, MAX_DECLARED_STEPS), (1, 150_000));
        assert_eq!(accumulation_plan(150_001, MAX_DECLARED_STEPS), (2, 75_001));
    }

    #[test]
    fn weight_decay_shift() {
        let p = vec![Tensor::vector(vec![0.6, 0.8])];
        let g = vec![Tensor::vector(vec![1.0, -1.0])];
        assert_eq!(apply_weight_decay(&g, &p, 0.0), g);
        let shifted = apply_weight_decay(&g, &p, 1e-6);
        let diff = shifted[0].sub(&g[0]).unwrap();
        assert!((crate::numkit::global_norm(&diff) - 1e-6).abs() < 1e-15);
    }
}
