use serde::{Deserialize, Serialize};

use super::{TaskKind, TaskModel, TaskOutput};
use crate::data::{derive_seed, Dataset};
use crate::error::{contract, Error, Result};
use crate::geometry::{rotation_angle_deg, rotation_matrix};
use crate::losses::{task_loss, ClassificationLoss, TaskBatch, Target};
use crate::tensor::{grad, Tensor};
use crate::training::{model_metric, Adam, BatchStream, EvalSet, SamplingMethod};

/// A pretrained pose regressor must bring the mean rotation error below
/// this fraction of the error of always predicting the identity.
pub const POSE_BAR_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs trained before the convergence bar is first checked.
    pub min_epochs: usize,
    /// Epochs after which an unconverged model is a failure.
    pub max_epochs: usize,
    pub max_batches: Option<usize>,
    /// Validation episodes (retrieval) or pairs (pose) per check.
    pub eval_count: usize,
    pub n_way: usize,
    pub classification_loss: ClassificationLoss,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            lr: 3e-3,
            min_epochs: 10,
            max_epochs: 60,
            max_batches: None,
            eval_count: 100,
            n_way: 4,
            classification_loss: ClassificationLoss::CrossEntropy,
        }
    }
}

impl PretrainConfig {
    /// Defaults tuned per task: retrieval tolerates a larger step, pose
    /// regression needs a smaller one and more epochs.
    pub fn for_kind(kind: TaskKind) -> Self {
        let base = Self::default();
        match kind {
            TaskKind::Classification | TaskKind::Reconstruction => base,
            TaskKind::Retrieval => Self { lr: 1e-2, ..base },
            TaskKind::PoseRegression => Self {
                lr: 1e-3,
                min_epochs: 40,
                max_epochs: 120,
                ..base
            },
        }
    }
}

/// Frozen pretrained models of one task, split into the models a sampler
/// may train against and held-out test models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPool {
    pub kind: TaskKind,
    pub train_models: Vec<TaskModel>,
    pub test_models: Vec<TaskModel>,
}

impl ModelPool {
    pub fn train_refs(&self) -> Vec<&TaskModel> {
        self.train_models.iter().collect()
    }
}

/// Whether a validation `metric` on `val` meets the convergence bar of
/// `kind` for `dataset`.
pub fn meets_bar(kind: TaskKind, metric: f64, dataset: &Dataset, val: &EvalSet) -> bool {
    match kind {
        TaskKind::Classification => metric >= 0.9,
        TaskKind::Reconstruction => {
            let s = dataset.mean_nn_spacing();
            metric < 10.0 * s * s
        }
        TaskKind::Retrieval => metric >= 1.0,
        TaskKind::PoseRegression => metric < POSE_BAR_FRACTION * identity_rotation_error(val),
    }
}

/// Mean rotation error of always predicting no rotation.
pub fn identity_rotation_error(val: &EvalSet) -> f64 {
    let EvalSet::Registration(pairs) = val else {
        return f64::NAN;
    };
    let id = rotation_matrix([0.0; 3]);
    pairs
        .iter()
        .map(|p| rotation_angle_deg(&id, &rotation_matrix(p.euler_deg)))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Supervised pose objective: squared error of angles (radians) and
/// translation against the ground truth.
fn pose_supervised_loss(model: &TaskModel, p: &[Tensor<f64>], batch: &TaskBatch<f64>) -> Result<Tensor<f64>> {
    let Target::Pose { euler_deg, translation } = &batch.target else {
        return Err(Error::Contract("pose batch without pose target".into()));
    };
    let b = batch.len();
    let TaskOutput::Pose { euler_deg: pe, translation: pt } = super::task_forward(model, p, &batch.inputs)? else {
        unreachable!("pose model outputs a pose")
    };
    let deg = std::f64::consts::PI / 180.0;
    let te = Tensor::new(euler_deg.iter().flatten().map(|v| v * deg).collect(), vec![b, 3])?;
    let tt = Tensor::new(translation.iter().flatten().copied().collect(), vec![b, 3])?;
    let angle_err = pe.scale(deg).sub(&te)?.square().sum();
    let shift_err = pt.sub(&tt)?.square().sum();
    Ok(angle_err.add(&shift_err)?.scale(1.0 / b as f64))
}

/// Trains one model on unsampled clouds until it meets its task's bar on
/// the validation split, then freezes it.
pub fn pretrain_task_model(kind: TaskKind, seed: u64, dataset: &Dataset, cfg: &PretrainConfig) -> Result<TaskModel> {
    contract!(cfg.batch_size >= 1 && cfg.lr > 0.0, "invalid pretraining config");
    contract!(!dataset.val.is_empty(), "pretraining needs a validation split");
    let mut model = TaskModel::init(kind, seed, dataset.spec.m);
    let mut opt = Adam::new(cfg.lr);
    let stream = BatchStream::new(kind, &dataset.train, derive_seed(seed, 1), cfg.batch_size)
        .with_max_batches(cfg.max_batches);
    let val = EvalSet::build(kind, &dataset.val, cfg.eval_count, cfg.n_way, derive_seed(seed, 2))?;
    let mut last = f64::NAN;
    for epoch in 0..cfg.max_epochs {
        for (bi, batch) in stream.epoch(epoch as u64)?.iter().enumerate() {
            let p = model.bind::<f64>();
            let loss = match kind {
                TaskKind::PoseRegression => pose_supervised_loss(&model, &p, batch)?,
                _ => task_loss(&model, &p, batch, &batch.inputs, cfg.classification_loss)?,
            };
            if !loss.item().is_finite() {
                return Err(Error::PretrainFailure {
                    seed,
                    reason: format!("non-finite loss at epoch {epoch}, batch {bi}"),
                });
            }
            let grads = grad(&loss, &p, false)?;
            opt.update(&mut model.params, &grads.iter().map(|g| g.to_vec()).collect::<Vec<_>>())?;
        }
        if epoch + 1 >= cfg.min_epochs {
            last = model_metric(&model, &val, &SamplingMethod::Identity)?;
            if meets_bar(kind, last, dataset, &val) {
                return Ok(model.freeze());
            }
        }
    }
    Err(Error::PretrainFailure {
        seed,
        reason: format!(
            "{kind} model did not reach its bar in {} epochs (last {} = {last:.4})",
            cfg.max_epochs,
            kind.metric_name()
        ),
    })
}

/// Pretrains one model per seed. The first `n_train` form the training
/// pool, the rest the disjoint test pool.
pub fn pretrain_task_models(
    kind: TaskKind,
    seeds: &[u64],
    n_train: usize,
    dataset: &Dataset,
    cfg: &PretrainConfig,
) -> Result<ModelPool> {
    let mut uniq = seeds.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    contract!(uniq.len() == seeds.len(), "pretraining seeds must be distinct");
    contract!(n_train <= seeds.len(), "n_train={n_train} exceeds {} seeds", seeds.len());
    let mut models = seeds
        .iter()
        .map(|&s| pretrain_task_model(kind, s, dataset, cfg))
        .collect::<Result<Vec<_>>>()?;
    let test_models = models.split_off(n_train);
    Ok(ModelPool {
        kind,
        train_models: models,
        test_models,
    })
}
