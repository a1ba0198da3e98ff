use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{encode_batch, mlp2, ENCODER_HIDDEN, ENCODER_PARAMS, FEATURE_DIM, HEAD_HIDDEN};
use super::ParamSet;
use crate::error::{contract, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Number of shape classes predicted by classification heads.
pub const NUM_CLASSES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Reconstruction,
    Retrieval,
    PoseRegression,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Classification,
        TaskKind::Reconstruction,
        TaskKind::Retrieval,
        TaskKind::PoseRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Reconstruction => "reconstruction",
            TaskKind::Retrieval => "retrieval",
            TaskKind::PoseRegression => "pose_regression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Number of point clouds one example feeds the network.
    pub fn arity(self) -> usize {
        match self {
            TaskKind::Classification | TaskKind::Reconstruction => 1,
            TaskKind::Retrieval | TaskKind::PoseRegression => 2,
        }
    }

    /// Whether the evaluation metric improves upwards (accuracy) rather
    /// than downwards (distance, angle).
    pub fn higher_is_better(self) -> bool {
        matches!(self, TaskKind::Classification | TaskKind::Retrieval)
    }

    /// Name of the evaluation metric.
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Classification => "accuracy",
            TaskKind::Reconstruction => "chamfer",
            TaskKind::Retrieval => "retrieval_accuracy",
            TaskKind::PoseRegression => "rotation_error_deg",
        }
    }

    fn head_in(self) -> usize {
        match self {
            TaskKind::Classification | TaskKind::Reconstruction => FEATURE_DIM,
            TaskKind::Retrieval | TaskKind::PoseRegression => 2 * FEATURE_DIM,
        }
    }

    fn head_out(self, m: usize) -> usize {
        match self {
            TaskKind::Classification => NUM_CLASSES,
            TaskKind::Reconstruction => m * 3,
            TaskKind::Retrieval => 1,
            TaskKind::PoseRegression => 6,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A task network: shared-architecture encoder plus a task head.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel {
    /// Unique identity, derived from kind and pretraining seed.
    pub uid: String,
    pub kind: TaskKind,
    pub seed: u64,
    /// Cloud size the reconstruction head emits.
    pub m: usize,
    pub params: ParamSet,
    pub frozen: bool,
}

pub fn model_uid(kind: TaskKind, seed: u64) -> String {
    format!("{}#{seed}", kind.name())
}

impl TaskModel {
    /// Fresh, trainable model with weights drawn from `seed`.
    pub fn init(kind: TaskKind, seed: u64, m: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.push_dense("enc.0", 3, ENCODER_HIDDEN, &mut rng);
        params.push_dense("enc.1", ENCODER_HIDDEN, FEATURE_DIM, &mut rng);
        params.push_dense("head.0", kind.head_in(), HEAD_HIDDEN, &mut rng);
        params.push_dense("head.1", HEAD_HIDDEN, kind.head_out(m), &mut rng);
        Self {
            uid: model_uid(kind, seed),
            kind,
            seed,
            m,
            params,
            frozen: false,
        }
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Parameter tensors: constants when frozen, trainable leaves otherwise.
    pub fn bind<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.params.bind(!self.frozen)
    }
}

/// What a task network produces for a batch.
#[derive(Clone, Debug)]
pub enum TaskOutput<T: Scalar> {
    /// `B × C` class logits.
    Logits(Tensor<T>),
    /// `B × m × 3` reconstructed clouds.
    Cloud(Tensor<T>),
    /// `B` match probabilities.
    Score(Tensor<T>),
    /// `B × 3` Euler angles in degrees and `B × 3` translations.
    Pose { euler_deg: Tensor<T>, translation: Tensor<T> },
}

impl<T: Scalar> TaskOutput<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        match self {
            TaskOutput::Logits(t) | TaskOutput::Cloud(t) | TaskOutput::Score(t) => t,
            TaskOutput::Pose { euler_deg, .. } => euler_deg,
        }
    }
}

/// Runs `model` (with bound parameters `p`) on a batch. `inputs` holds one
/// `B × n × 3` tensor, or two for the pair tasks.
pub fn task_forward<T: Scalar>(
    model: &TaskModel,
    p: &[Tensor<T>],
    inputs: &[Tensor<T>],
) -> Result<TaskOutput<T>> {
    let kind = model.kind;
    contract!(
        inputs.len() == kind.arity(),
        "{kind} takes {} input clouds per example, got {}",
        kind.arity(),
        inputs.len()
    );
    for x in inputs {
        contract!(
            x.rank() == 3 && x.shape()[2] == 3 && x.shape()[1] > 0,
            "{kind}: expected a B x n x 3 batch, got {:?}",
            x.shape()
        );
    }
    let (enc, head) = p.split_at(ENCODER_PARAMS);
    let b = inputs[0].shape()[0];
    Ok(match kind {
        TaskKind::Classification => TaskOutput::Logits(mlp2(&encode_batch(enc, &inputs[0])?, head)?),
        TaskKind::Reconstruction => {
            let out = mlp2(&encode_batch(enc, &inputs[0])?, head)?;
            TaskOutput::Cloud(out.reshape(&[b, model.m, 3])?)
        }
        TaskKind::Retrieval => {
            let e1 = encode_batch(enc, &inputs[0])?;
            let e2 = encode_batch(enc, &inputs[1])?;
            let feat = Tensor::concat(&[e1.sub(&e2)?.abs(), e1.mul(&e2)?], 1)?;
            TaskOutput::Score(mlp2(&feat, head)?.sigmoid().reshape(&[b])?)
        }
        TaskKind::PoseRegression => {
            // both clouds are encoded about their centroids; the translation
            // is the centroid offset plus a learned residual
            let (c1, src) = centered(&inputs[0])?;
            let (c2, tpl) = centered(&inputs[1])?;
            let e1 = encode_batch(enc, &src)?;
            let e2 = encode_batch(enc, &tpl)?;
            let out = mlp2(&Tensor::concat(&[e1, e2], 1)?, head)?;
            TaskOutput::Pose {
                // angles are regressed in radians
                euler_deg: out.narrow(1, 0, 3)?.scale(T::lit(180.0 / std::f64::consts::PI)),
                translation: c2.sub(&c1)?.add(&out.narrow(1, 3, 3)?)?,
            }
        }
    })
}

/// Per-cloud centroids `B × 3` and the clouds moved to them.
fn centered<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = x.mean_axis(1)?;
    let moved = x.sub(&c.broadcast_axis(1, x.shape()[1])?)?;
    Ok((c, moved))
}
