//! The inner-problem distribution: small parametric tasks, their
//! configuration language, datasets, augmentations and sampling.

mod activation;
pub mod cfgtext;
mod config;
mod dataset;
mod idx;
mod model;
mod quadratic;
mod sampling;
mod task;

pub use activation::Activation;
pub use config::{
    byte_lm_config, canonicalize, emit_config, image_ae_config, image_mlp_config, parse_config, parse_config_list,
    Architecture, Augmentation, AugmentationKind, AugmentationSpec, Family, Initializer, OutputConstraint,
    ReparamMode, ResolvedConfig, TaskConfig, INNER_ES_PAIRS, REPARAM_RANGES,
};
pub use dataset::{
    load_idx, load_idx_pair, resolve_dataset, synthetic_dataset, Batch, Dataset, DatasetKind, SyntheticKind,
    DATA_DIR_ENV,
};
pub use idx::{downscale, parse_idx, read_idx, IdxArray};
pub use model::ParamShape;
pub use quadratic::Quadratic;
pub use sampling::{measured_step_time, sample_task, sample_task_with, RuntimeThresholds, SampledTask, SamplerOptions};
pub use task::{hand_normalize_loss, init_tensors, LossKind, Problem, RunContext, Task};
