//! Learned-optimizer core: a hierarchical hypernetwork update rule, the
//! small-task distribution it is meta-trained on, antithetic-ES
//! meta-training, hand-designed baselines and the speedup-normalized
//! evaluation harness.

pub mod baselines;
pub mod error;
pub mod eval_harness;
pub mod features;
pub mod meta_es;
pub mod numkit;
pub mod opt_state;
pub mod optimizer;
pub mod task_zoo;
pub mod train;
pub mod velo_net;

pub use error::{Error, Result};
