//! Learning-curve storage, the baseline-envelope speedup normalizer,
//! aggregate reports, continuation runs, batch-size sweeps and the
//! step-time model.

mod continuation;
mod envelope;
mod report;
mod store;
mod sweep;
mod timing;

pub use continuation::{continuation, transform_state, ContinuationMode, ContinuationRun};
pub use envelope::{build_envelope, speedup, BaselineEnvelope, Speedup, SpeedupKind, DEFAULT_EMA_DECAY};
pub use report::{aggregate_report, percentile, OptimizerSummary, Report, COST_CLIP, PERCENTILES, SPEEDUP_CLIP};
pub use store::{CurveStore, PutOutcome};
pub use sweep::{batch_sweep, probe_step_sizes, steps_for_budget, BatchSweepRow, SweepOptimizer};
pub use timing::{fit_timing, measure_velo_step, TimingFit};
