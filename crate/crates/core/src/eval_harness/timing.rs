use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{sample_normal, RngKey, Tensor};
use crate::opt_state::init_state;
use crate::task_zoo::ParamShape;
use crate::velo_net::{velo_step, MetaParams, UpdateConstants};

/// `seconds ≈ overhead + per_param · params`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingFit {
    pub lambda_overhead: f64,
    pub lambda_params: f64,
    /// Coefficient of determination of the fit in log-time.
    pub r2: f64,
    pub iterations: usize,
}

impl TimingFit {
    pub fn predict(&self, params: f64) -> f64 {
        self.lambda_overhead + self.lambda_params * params
    }
}

fn objective(a: f64, b: f64, data: &[(f64, f64)]) -> (f64, [f64; 2]) {
    let (ea, eb) = (a.exp(), b.exp());
    let mut loss = 0.0;
    let mut g = [0.0; 2];
    for &(n, t) in data {
        let pred = ea + eb * n;
        let r = pred.ln() - t.ln();
        loss += r * r;
        g[0] += 2.0 * r * ea / pred;
        g[1] += 2.0 * r * eb * n / pred;
    }
    (loss, g)
}

/// Least squares on `log t` over `(log λ_overhead, log λ_params)` by
/// gradient descent with backtracking line search.
pub fn fit_timing(measurements: &[(f64, f64)]) -> Result<TimingFit> {
    if measurements.iter().any(|&(n, t)| !(n > 0.0 && t > 0.0 && n.is_finite() && t.is_finite())) {
        return Err(Error::Range("timing measurements must be positive and finite".into()));
    }
    let mut ns: Vec<f64> = measurements.iter().map(|m| m.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 2 {
        return Err(Error::Range("timing fit needs at least two distinct parameter counts".into()));
    }
    let smallest = measurements.iter().copied().min_by(|x, y| x.0.total_cmp(&y.0)).expect("non-empty");
    let largest = measurements.iter().copied().max_by(|x, y| x.0.total_cmp(&y.0)).expect("non-empty");
    let (mut a, mut b) = ((smallest.1 / 2.0).ln(), (largest.1 / largest.0 / 2.0).ln());
    let (mut loss, mut g) = objective(a, b, measurements);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < 200_000 {
        let gn2 = g[0] * g[0] + g[1] * g[1];
        if gn2.sqrt() < 1e-13 {
            break;
        }
        iterations += 1;
        step *= 2.0;
        loop {
            let (na, nb) = (a - step * g[0], b - step * g[1]);
            let (nl, ng) = objective(na, nb, measurements);
            if nl <= loss - 0.5 * step * gn2 {
                (a, b, loss, g) = (na, nb, nl, ng);
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                break;
            }
        }
        if step < 1e-20 {
            break;
        }
    }
    let logs: Vec<f64> = measurements.iter().map(|m| m.1.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let ss_tot: f64 = logs.iter().map(|l| (l - mean) * (l - mean)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - loss / ss_tot } else { 1.0 };
    Ok(TimingFit {
        lambda_overhead: a.exp(),
        lambda_params: b.exp(),
        r2,
        iterations,
    })
}

/// Median wall time of `reps` learned-optimizer steps on a single tensor
/// of about `params` entries.
pub fn measure_velo_step(theta: &MetaParams, params: usize, reps: usize) -> Result<f64> {
    let cols = 100.min(params.max(1));
    let rows = params.div_ceil(cols);
    let shapes = vec![ParamShape::new("w", vec![rows, cols], rows)];
    let key = RngKey::new(params as u64);
    let mut p = vec![sample_normal(key.fold_in(0), &[rows, cols])];
    let g: Vec<Tensor> = vec![sample_normal(key.fold_in(1), &[rows, cols])];
    let mut state = init_state(&shapes, reps.max(1) as u64 + 1)?;
    let consts = UpdateConstants::default();
    let mut times = Vec::with_capacity(reps.max(1));
    for i in 0..reps.max(1) {
        let start = Instant::now();
        velo_step(&mut p, &g, 1.0 / (1.0 + i as f64), &mut state, theta, &consts)?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}
