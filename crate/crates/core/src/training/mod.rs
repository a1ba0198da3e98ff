//! Sampler training: single-model and joint engines, meta-training,
//! adaptation, evaluation, optimizers and the metric log.

mod batches;
mod engines;
mod evaluate;
mod log;
mod meta;
mod optim;

pub use batches::{pair_batch, stack_clouds, BatchStream};
pub use engines::{adapt, train_joint, train_single, TaskData, TrainConfig, TrainOutcome};
pub use evaluate::{
    check_disjoint, evaluate, evaluate_method, model_metric, EvalMode, EvalSet, PoolMetrics,
    SamplingMethod,
};
pub use log::{read_jsonl, write_jsonl, EpochRecord, LossComponents};
pub use meta::{
    inner_adapt, meta_outer_update, meta_step, meta_train, sampler_gradient, MetaConfig,
    MetaOutcome, MetaStepState, MetaTask, TaskModelKey,
};
pub use optim::{sgd_update, Adam, Optimizer, OptimizerKind};

#[cfg(test)]
mod tests;
