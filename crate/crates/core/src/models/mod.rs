//! Task networks, the learnable sampler, pretrained model pools and
//! checkpoints.

mod checkpoint;
pub mod nets;
mod params;
mod pretrain;
mod sampler;
mod task;

pub use checkpoint::{
    load_sampler, load_task_model, save_sampler, save_task_model, Manifest, ManifestModel,
};
pub use nets::{encode_batch, FEATURE_DIM};
pub use params::{Param, ParamSet};
pub use pretrain::{
    identity_rotation_error, meets_bar, pretrain_task_model, pretrain_task_models, ModelPool,
    PretrainConfig, POSE_BAR_FRACTION,
};
pub use sampler::{
    match_indices, sampler_forward, sampler_match, soft_project, SamplerModel, SoftSample,
    DEFAULT_K_PROJ, LOG_TEMP,
};
pub use task::{model_uid, task_forward, TaskKind, TaskModel, TaskOutput, NUM_CLASSES};

#[cfg(test)]
mod tests;
