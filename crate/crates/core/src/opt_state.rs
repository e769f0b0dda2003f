//! Non-learned running statistics carried across optimizer steps.

use crate::error::{Error, Result};
use crate::numkit::{ByteReader, ByteWriter, Tensor};
use crate::task_zoo::ParamShape;

pub const MOMENTUM_DECAYS: [f64; 3] = [0.9, 0.99, 0.999];
pub const SECOND_MOMENT_DECAY: f64 = 0.999;
pub const FACTORED_DECAYS: [f64; 3] = [0.9, 0.99, 0.999];
pub const NUM_LOSS_TIMESCALES: usize = 10;

/// Second-moment statistics per timescale: row/column means of `g²` for
/// tensors of rank ≥ 2 (leading axes flattened into rows), full EMAs
/// otherwise.
#[derive(Clone, Debug, PartialEq)]
pub enum Factored {
    RowCol {
        rows: usize,
        cols: usize,
        row_ema: [Vec<f64>; 3],
        col_ema: [Vec<f64>; 3],
    },
    Full([Vec<f64>; 3]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorAccumulators {
    pub shape: Vec<usize>,
    pub momentum: [Vec<f64>; 3],
    pub second_moment: Vec<f64>,
    pub factored: Factored,
}

impl TensorAccumulators {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        let z = || vec![0.0; n];
        let factored = if shape.len() >= 2 {
            let cols = shape[shape.len() - 1];
            let rows = n / cols;
            Factored::RowCol {
                rows,
                cols,
                row_ema: std::array::from_fn(|_| vec![0.0; rows]),
                col_ema: std::array::from_fn(|_| vec![0.0; cols]),
            }
        } else {
            Factored::Full(std::array::from_fn(|_| z()))
        };
        Self {
            shape: shape.to_vec(),
            momentum: std::array::from_fn(|_| z()),
            second_moment: z(),
            factored,
        }
    }

    pub fn len(&self) -> usize {
        self.second_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.second_moment.is_empty()
    }

    pub fn update(&mut self, g: &[f64]) {
        for (m, &b) in self.momentum.iter_mut().zip(&MOMENTUM_DECAYS) {
            ema_into(m, g.iter().copied(), b);
        }
        ema_into(&mut self.second_moment, g.iter().map(|x| x * x), SECOND_MOMENT_DECAY);
        match &mut self.factored {
            Factored::RowCol {
                rows,
                cols,
                row_ema,
                col_ema,
            } => {
                let (r, c) = (*rows, *cols);
                let mut row_mean = vec![0.0; r];
                let mut col_mean = vec![0.0; c];
                for i in 0..r {
                    let row = &g[i * c..(i + 1) * c];
                    let mut s = 0.0;
                    for (cm, &x) in col_mean.iter_mut().zip(row) {
                        let x2 = x * x;
                        s += x2;
                        *cm += x2;
                    }
                    row_mean[i] = s / c as f64;
                }
                col_mean.iter_mut().for_each(|v| *v /= r as f64);
                for k in 0..3 {
                    ema_into(&mut row_ema[k], row_mean.iter().copied(), FACTORED_DECAYS[k]);
                    ema_into(&mut col_ema[k], col_mean.iter().copied(), FACTORED_DECAYS[k]);
                }
            }
            Factored::Full(full) => {
                for (f, &b) in full.iter_mut().zip(&FACTORED_DECAYS) {
                    ema_into(f, g.iter().map(|x| x * x), b);
                }
            }
        }
    }

    /// Every statistic in a fixed order; used for snapshots and equality
    /// checks.
    pub fn flat_views(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.momentum.iter().map(Vec::as_slice).collect();
        out.push(&self.second_moment);
        match &self.factored {
            Factored::RowCol { row_ema, col_ema, .. } => {
                out.extend(row_ema.iter().map(Vec::as_slice));
                out.extend(col_ema.iter().map(Vec::as_slice));
            }
            Factored::Full(full) => out.extend(full.iter().map(Vec::as_slice)),
        }
        out
    }

    fn flat_views_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = self.momentum.iter_mut().collect();
        out.push(&mut self.second_moment);
        match &mut self.factored {
            Factored::RowCol { row_ema, col_ema, .. } => {
                out.extend(row_ema.iter_mut());
                out.extend(col_ema.iter_mut());
            }
            Factored::Full(full) => out.extend(full.iter_mut()),
        }
        out
    }
}

#[inline]
fn ema_into(acc: &mut [f64], xs: impl Iterator<Item = f64>, beta: f64) {
    for (a, x) in acc.iter_mut().zip(xs) {
        *a = beta * *a + (1.0 - beta) * x;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimescaleSpacing {
    Log,
    Linear,
}

/// Loss EMAs at ten timescales plus the running minimum of each.
#[derive(Clone, Debug, PartialEq)]
pub struct LossAccumulators {
    pub ema: [f64; NUM_LOSS_TIMESCALES],
    pub decays: [f64; NUM_LOSS_TIMESCALES],
    pub running_min: [f64; NUM_LOSS_TIMESCALES],
    pub initialized: bool,
    /// Set once a non-finite loss has been observed.
    pub poisoned: bool,
}

/// Timescales `x` over `[1, ln T]`; the upper end is floored at 2 so the
/// decays stay strictly increasing for very short runs.
pub fn loss_timescales(num_steps: u64, spacing: TimescaleSpacing) -> [f64; NUM_LOSS_TIMESCALES] {
    let hi = (num_steps.max(1) as f64).ln().max(2.0);
    std::array::from_fn(|i| {
        let f = i as f64 / (NUM_LOSS_TIMESCALES - 1) as f64;
        match spacing {
            TimescaleSpacing::Log => hi.powf(f),
            TimescaleSpacing::Linear => 1.0 + (hi - 1.0) * f,
        }
    })
}

impl LossAccumulators {
    pub fn new(num_steps: u64, spacing: TimescaleSpacing) -> Self {
        let xs = loss_timescales(num_steps, spacing);
        Self {
            ema: [0.0; NUM_LOSS_TIMESCALES],
            decays: xs.map(|x| (-1.0 / x).exp()),
            running_min: [0.0; NUM_LOSS_TIMESCALES],
            initialized: false,
            poisoned: false,
        }
    }

    pub fn update(&mut self, loss: f64) {
        if !loss.is_finite() {
            self.poisoned = true;
            return;
        }
        if !self.initialized {
            self.ema = [loss; NUM_LOSS_TIMESCALES];
            self.running_min = [loss; NUM_LOSS_TIMESCALES];
            self.initialized = true;
            return;
        }
        for i in 0..NUM_LOSS_TIMESCALES {
            let b = self.decays[i];
            self.ema[i] = b * self.ema[i] + (1.0 - b) * loss;
            self.running_min[i] = self.running_min[i].min(self.ema[i]);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub per_tensor: Vec<TensorAccumulators>,
    pub loss_acc: LossAccumulators,
    /// Completed steps.
    pub t: u64,
    /// Declared run length.
    pub total_steps: u64,
    /// Recurrent carry per tensor, owned by the learned optimizer; empty
    /// until first used.
    pub carry: Vec<Vec<f64>>,
    pub spacing: TimescaleSpacing,
}

pub fn init_state(shapes: &[ParamShape], total_steps: u64) -> Result<OptimizerState> {
    init_state_with(shapes, total_steps, TimescaleSpacing::Log)
}

pub fn init_state_with(shapes: &[ParamShape], total_steps: u64, spacing: TimescaleSpacing) -> Result<OptimizerState> {
    if total_steps < 1 {
        return Err(Error::Range("total steps must be at least 1".into()));
    }
    Ok(OptimizerState {
        per_tensor: shapes.iter().map(|s| TensorAccumulators::zeros(&s.shape)).collect(),
        loss_acc: LossAccumulators::new(total_steps, spacing),
        t: 0,
        total_steps,
        carry: vec![Vec::new(); shapes.len()],
        spacing,
    })
}

impl OptimizerState {
    /// Fold one step's gradients and loss into the statistics and advance `t`.
    pub fn update(&mut self, grads: &[Tensor], loss: f64) -> Result<()> {
        if grads.len() != self.per_tensor.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} tensors",
                grads.len(),
                self.per_tensor.len()
            )));
        }
        for (acc, g) in self.per_tensor.iter().zip(grads) {
            if acc.shape != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} vs state {:?}", g.shape(), acc.shape)));
            }
        }
        for (acc, g) in self.per_tensor.iter_mut().zip(grads) {
            acc.update(g.data());
        }
        self.loss_acc.update(loss);
        self.t += 1;
        Ok(())
    }

    /// Rebuild loss decays for a new declared length, keeping EMA values.
    pub fn set_total_steps(&mut self, total_steps: u64) {
        self.total_steps = total_steps.max(1);
        let xs = loss_timescales(self.total_steps, self.spacing);
        self.loss_acc.decays = xs.map(|x| (-1.0 / x).exp());
    }
}

/// Pure form of [`OptimizerState::update`].
pub fn update_accumulators(state: &OptimizerState, grads: &[Tensor], loss: f64) -> Result<OptimizerState> {
    let mut next = state.clone();
    next.update(grads, loss)?;
    Ok(next)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"VOST";
const SNAPSHOT_VERSION: u32 = 1;

pub fn encode_snapshot(state: &OptimizerState) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SNAPSHOT_MAGIC).u32(SNAPSHOT_VERSION);
    w.u64(state.t).u64(state.total_steps);
    w.u8(match state.spacing {
        TimescaleSpacing::Log => 0,
        TimescaleSpacing::Linear => 1,
    });
    let la = &state.loss_acc;
    w.u8(u8::from(la.initialized) | (u8::from(la.poisoned) << 1));
    w.f64s(&la.ema).f64s(&la.decays).f64s(&la.running_min);
    w.u64(state.per_tensor.len() as u64);
    for (acc, carry) in state.per_tensor.iter().zip(&state.carry) {
        w.u32(acc.shape.len() as u32);
        for &d in &acc.shape {
            w.u64(d as u64);
        }
        for v in acc.flat_views() {
            w.f64s(v);
        }
        w.f64s(carry);
    }
    w.finish()
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<OptimizerState> {
    let mut r = ByteReader::new(bytes, "optimizer snapshot");
    if r.take(4)? != SNAPSHOT_MAGIC {
        return Err(r.error("bad magic"));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let t = r.u64()?;
    let total_steps = r.u64()?;
    let spacing = match r.u8()? {
        0 => TimescaleSpacing::Log,
        1 => TimescaleSpacing::Linear,
        other => return Err(r.error(format!("bad spacing tag {other}"))),
    };
    let flags = r.u8()?;
    let fixed = |r: &mut ByteReader| -> Result<[f64; NUM_LOSS_TIMESCALES]> {
        r.f64s()?
            .try_into()
            .map_err(|_| r.error("loss accumulator length"))
    };
    let loss_acc = LossAccumulators {
        ema: fixed(&mut r)?,
        decays: fixed(&mut r)?,
        running_min: fixed(&mut r)?,
        initialized: flags & 1 != 0,
        poisoned: flags & 2 != 0,
    };
    let n = r.u64()? as usize;
    let mut per_tensor = Vec::new();
    let mut carry = Vec::new();
    for _ in 0..n {
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape.contains(&0) || shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).is_none() {
            return Err(r.error(format!("bad shape {shape:?}")));
        }
        let mut acc = TensorAccumulators::zeros(&shape);
        for v in acc.flat_views_mut() {
            let data = r.f64s()?;
            if data.len() != v.len() {
                return Err(r.error("accumulator length mismatch"));
            }
            *v = data;
        }
        per_tensor.push(acc);
        carry.push(r.f64s()?);
    }
    r.expect_end()?;
    Ok(OptimizerState {
        per_tensor,
        loss_acc,
        t,
        total_steps,
        carry,
        spacing,
    })
}
