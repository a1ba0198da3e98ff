use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::evaluate::{check_disjoint, evaluate, evaluate_method, EvalMode, EvalSet, SamplingMethod};
use super::log::{EpochRecord, LossComponents};
use super::optim::{Optimizer, OptimizerKind};
use super::BatchStream;
use crate::data::Sample;
use crate::error::{contract, Error, Result};
use crate::losses::{
    loss_projection, loss_sampler_task_joint, loss_simplification, loss_total, sampler_pass,
    ClassificationLoss, LossWeights, TaskBatch,
};
use crate::models::{SamplerModel, TaskKind, TaskModel};
use crate::tensor::{grad, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Evaluate every this many epochs (0 disables evaluation).
    pub eval_every: usize,
    /// Caps the batches per epoch.
    pub max_batches: Option<usize>,
    pub classification_loss: ClassificationLoss,
    pub eval_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            epochs: 10,
            seed: 0,
            loss_weights: LossWeights::default(),
            eval_every: 1,
            max_batches: None,
            classification_loss: ClassificationLoss::CrossEntropy,
            eval_mode: EvalMode::Matched,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.batch_size >= 1, "batch_size must be at least 1");
        contract!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive, got {}", self.lr);
        self.loss_weights.validate()
    }
}

/// Training data and held-out evaluation data of one task.
#[derive(Clone, Copy, Debug)]
pub struct TaskData<'a> {
    pub kind: TaskKind,
    pub train: &'a [Sample],
    pub eval: &'a EvalSet,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub sampler: SamplerModel,
    pub log: Vec<EpochRecord>,
}

/// Loss components of one sampler step on `batch` against `pool`.
pub(crate) struct StepLosses {
    pub task: Tensor<f64>,
    pub simp: Tensor<f64>,
    pub proj: Tensor<f64>,
    pub total: Tensor<f64>,
}

pub(crate) fn step_losses(
    sampler: &SamplerModel,
    theta: &[Tensor<f64>],
    pool: &[&TaskModel],
    batch: &TaskBatch<f64>,
    w: &LossWeights,
    cls: ClassificationLoss,
) -> Result<StepLosses> {
    let pass = sampler_pass(sampler, theta, batch)?;
    let task = loss_sampler_task_joint(&pass, pool, batch, cls)?;
    let simp = loss_simplification(&pass.sample.generated, &pass.stacked, w.gamma_max, w.gamma_cov)?;
    let proj = loss_projection(&pass.log_temp);
    let total = loss_total(&task, &simp, &proj, w)?;
    Ok(StepLosses { task, simp, proj, total })
}

pub(crate) fn grads_of(loss: &Tensor<f64>, theta: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>> {
    Ok(grad(loss, theta, false)?.iter().map(Tensor::to_vec).collect())
}

fn check_pool(pool: &[&TaskModel], kind: TaskKind) -> Result<()> {
    contract!(!pool.is_empty(), "training pool is empty");
    for m in pool {
        contract!(m.frozen, "task model {} must be frozen during sampler training", m.uid);
        contract!(m.kind == kind, "model {} is {}, data is {kind}", m.uid, m.kind);
    }
    Ok(())
}

/// Shared loop of the single-model, joint and adaptation engines: Adam on
/// `w_task · Σ_j L(A_j(f_θ)) + w_simp · simplification + w_proj · projection`.
fn run(
    engine: &str,
    mut sampler: SamplerModel,
    pool: &[&TaskModel],
    test_pool: &[TaskModel],
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_pool(pool, data.kind)?;
    sampler.trained_on.extend(pool.iter().map(|m| m.uid.clone()));
    check_disjoint(&sampler, test_pool)?;
    let stream = BatchStream::new(data.kind, data.train, cfg.seed, cfg.batch_size).with_max_batches(cfg.max_batches);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut sums = LossComponents::default();
        let batches = stream.epoch(epoch as u64)?;
        for (bi, batch) in batches.iter().enumerate() {
            let theta = sampler.params.bind::<f64>(true);
            let l = step_losses(&sampler, &theta, pool, batch, &cfg.loss_weights, cfg.classification_loss)?;
            let vals = [l.task.item(), l.simp.item(), l.proj.item(), l.total.item()];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalAbort(format!(
                    "{engine} on {}: epoch {epoch}, batch {bi}: task={} simplification={} projection={} total={}",
                    data.kind, vals[0], vals[1], vals[2], vals[3]
                )));
            }
            sums.task += vals[0];
            sums.simplification += vals[1];
            sums.projection += vals[2];
            sums.total += vals[3];
            opt.update(&mut sampler.params, &grads_of(&l.total, &theta)?)?;
        }
        let nb = batches.len() as f64;
        let mut rec = EpochRecord::new(engine, data.kind, cfg.seed, epoch);
        rec.losses = LossComponents {
            task: sums.task / nb,
            simplification: sums.simplification / nb,
            projection: sums.projection / nb,
            total: sums.total / nb,
        };
        rec.temperature = sampler.temperature();
        if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            record_eval(&mut rec, &sampler, pool, test_pool, data.eval, cfg.eval_mode)?;
        }
        rec.wall_ms = start.elapsed().as_millis() as u64;
        log.push(rec);
    }
    Ok(TrainOutcome { sampler, log })
}

/// Adds test-pool metrics and the metrics of the training models
/// themselves (for measuring the generalization gap).
fn record_eval(
    rec: &mut EpochRecord,
    sampler: &SamplerModel,
    pool: &[&TaskModel],
    test_pool: &[TaskModel],
    set: &EvalSet,
    mode: EvalMode,
) -> Result<()> {
    if !test_pool.is_empty() {
        let m = evaluate(sampler, test_pool, set, mode)?;
        for (uid, v) in m.per_model {
            rec.eval.insert(format!("test/{uid}"), v);
        }
        rec.eval.insert("test/mean".into(), m.mean);
    }
    let train: Vec<TaskModel> = pool.iter().map(|&m| m.clone()).collect();
    let m = evaluate_method(&train, set, &SamplingMethod::Learned { sampler, mode })?;
    for (uid, v) in m.per_model {
        rec.eval.insert(format!("train/{uid}"), v);
    }
    rec.eval.insert("train/mean".into(), m.mean);
    Ok(())
}

/// Trains the sampler against one frozen model.
pub fn train_single(
    sampler: SamplerModel,
    model: &TaskModel,
    test_pool: &[TaskModel],
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run("single", sampler, &[model], test_pool, data, cfg)
}

/// Trains the sampler against the summed losses of `pool`; evaluation uses
/// the disjoint `test_pool`.
pub fn train_joint(
    sampler: SamplerModel,
    pool: &[&TaskModel],
    test_pool: &[TaskModel],
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run("joint", sampler, pool, test_pool, data, cfg)
}

/// Fine-tunes a (meta-)pretrained sampler on an unseen pool with joint
/// training. Fails if any pool model already shaped the sampler.
pub fn adapt(
    sampler: SamplerModel,
    pool: &[&TaskModel],
    test_pool: &[TaskModel],
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let reused: Vec<&str> = pool
        .iter()
        .filter(|m| sampler.trained_on.contains(&m.uid))
        .map(|m| m.uid.as_str())
        .collect();
    if !reused.is_empty() {
        return Err(Error::PoolOverlap(format!(
            "adaptation models {reused:?} were used in meta-training"
        )));
    }
    run("adapt", sampler, pool, test_pool, data, cfg)
}
