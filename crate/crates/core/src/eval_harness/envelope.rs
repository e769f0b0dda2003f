use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::LearningCurve;

pub const DEFAULT_EMA_DECAY: f64 = 0.95;

/// Best smoothed baseline loss reached by each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEnvelope {
    pub task_id: String,
    pub steps: Vec<u64>,
    pub loss: Vec<f64>,
}

impl BaselineEnvelope {
    pub fn horizon(&self) -> u64 {
        self.steps.last().copied().unwrap_or(0)
    }
}

fn ema(xs: &[f64], decay: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = f64::NAN;
    for &x in xs {
        acc = if acc.is_nan() { x } else { decay * acc + (1.0 - decay) * x };
        // A diverged (+∞) tail stays infinite rather than producing NaN.
        if x.is_infinite() {
            acc = f64::INFINITY;
        }
        out.push(acc);
    }
    out
}

/// Per optimizer configuration: mean over seeds, EMA smoothing; then the
/// pointwise minimum across configurations and a running minimum.
pub fn build_envelope(curves: &[LearningCurve], ema_decay: f64) -> Result<BaselineEnvelope> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Empty("envelope needs at least one baseline curve".into()))?;
    let steps = first.steps();
    let mut groups: BTreeMap<&str, Vec<&LearningCurve>> = BTreeMap::new();
    for c in curves {
        if c.task_id != first.task_id {
            return Err(Error::Config(format!(
                "envelope mixes tasks {:?} and {:?}",
                first.task_id, c.task_id
            )));
        }
        if c.steps() != steps {
            return Err(Error::Config(format!(
                "curve {}/{} seed {} is on a different step grid",
                c.task_id, c.optimizer_id, c.seed
            )));
        }
        groups.entry(c.optimizer_id.as_str()).or_default().push(c);
    }
    let mut env = vec![f64::INFINITY; steps.len()];
    for runs in groups.values() {
        let mean: Vec<f64> = (0..steps.len())
            .map(|i| runs.iter().map(|c| c.records[i].loss).sum::<f64>() / runs.len() as f64)
            .collect();
        for (e, s) in env.iter_mut().zip(ema(&mean, ema_decay)) {
            *e = e.min(s);
        }
    }
    let mut best = f64::INFINITY;
    for e in env.iter_mut() {
        best = best.min(*e);
        *e = best;
    }
    Ok(BaselineEnvelope {
        task_id: first.task_id.clone(),
        steps,
        loss: env,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedupKind {
    Reached,
    /// The envelope never got this low; the value is the horizon ratio.
    LowerBound,
    /// The target itself diverged; the value is the smallest grid ratio.
    TargetDiverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub value: f64,
    pub kind: SpeedupKind,
}

/// Baseline steps needed to match `target_loss`, divided by
/// `target_steps`. Crossings are interpolated linearly in
/// `(log step, loss)`.
pub fn speedup(target_loss: f64, target_steps: u64, env: &BaselineEnvelope) -> Result<Speedup> {
    if target_steps == 0 {
        return Err(Error::Range("target steps must be positive".into()));
    }
    if env.horizon() < target_steps {
        return Err(Error::Range(format!(
            "envelope horizon {} shorter than target {target_steps}",
            env.horizon()
        )));
    }
    let pts: Vec<(f64, f64)> = env
        .steps
        .iter()
        .zip(&env.loss)
        .filter(|(s, _)| **s >= 1)
        .map(|(&s, &l)| (s as f64, l))
        .collect();
    let ratio = |s: f64| s / target_steps as f64;
    if target_loss.is_nan() || target_loss == f64::INFINITY {
        return Ok(Speedup {
            value: ratio(pts[0].0),
            kind: SpeedupKind::TargetDiverged,
        });
    }
    for (i, &(s, l)) in pts.iter().enumerate() {
        if l <= target_loss {
            let mut crossing = s;
            if i > 0 {
                let (s0, l0) = pts[i - 1];
                if l0.is_finite() && l0 > l && l < target_loss {
                    let frac = (l0 - target_loss) / (l0 - l);
                    crossing = (s0.ln() + frac * (s.ln() - s0.ln())).exp();
                }
            }
            return Ok(Speedup {
                value: ratio(crossing),
                kind: SpeedupKind::Reached,
            });
        }
    }
    Ok(Speedup {
        value: env.horizon() as f64 / target_steps as f64,
        kind: SpeedupKind::LowerBound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::CurveRecord;

    fn curve(opt: &str, seed: u64, losses: &[f64]) -> LearningCurve {
        let mut c = LearningCurve::new("t", opt, seed);
        c.records = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| CurveRecord {
                step: i as u64 + 1,
                loss: l,
                wall_time_s: 0.0,
                step_sizes: None,
            })
            .collect();
        c
    }

    #[test]
    fn single_monotone_curve_is_its_ema() {
        let xs = [5.0, 4.0, 2.0, 1.5, 1.0];
        let env = build_envelope(&[curve("a", 0, &xs)], 0.5).unwrap();
        assert_eq!(env.loss, ema(&xs, 0.5));
    }

    #[test]
    fn dominating_curve_wins() {
        let lo = [3.0, 2.0, 1.0];
        let env = build_envelope(&[curve("a", 0, &[4.0, 3.0, 2.0]), curve("b", 0, &lo)], 0.0).unwrap();
        assert_eq!(env.loss, lo.to_vec());
    }

    #[test]
    fn figure_semantics() {
        let env = BaselineEnvelope {
            task_id: "t".into(),
            steps: vec![1, 10_000, 20_000, 300_000],
            loss: vec![10.0, 2.0, 1.0, 0.5],
        };
        assert_eq!(speedup(1.0, 10_000, &env).unwrap().value, 2.0);
        let lb = speedup(0.1, 10_000, &env).unwrap();
        assert_eq!((lb.value, lb.kind), (30.0, SpeedupKind::LowerBound));
        assert_eq!(speedup(f64::INFINITY, 10_000, &env).unwrap().kind, SpeedupKind::TargetDiverged);
        assert!(speedup(1.0, 400_000, &env).is_err());
    }
}
