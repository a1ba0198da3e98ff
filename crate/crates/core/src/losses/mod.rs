//! Task losses, sampler losses (single-model and joint), simplification,
//! projection and the weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::{chamfer_distance, rigid_transform};
use crate::models::{task_forward, SamplerModel, SoftSample, TaskKind, TaskModel, TaskOutput, LOG_TEMP};
use crate::tensor::Tensor;
use crate::Scalar;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_task: f64,
    pub w_simp: f64,
    pub w_proj: f64,
    /// Weight of the worst generated point's nearest-neighbour term.
    pub gamma_max: f64,
    /// Weight of the input-coverage term.
    pub gamma_cov: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_task: 1.0,
            w_simp: 1.0,
            w_proj: 1.0,
            gamma_max: 1.0,
            gamma_cov: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_task", self.w_task),
            ("w_simp", self.w_simp),
            ("w_proj", self.w_proj),
            ("gamma_max", self.gamma_max),
            ("gamma_cov", self.gamma_cov),
        ] {
            contract!(v >= 0.0 && v.is_finite(), "loss weight {name} must be nonnegative, got {v}");
        }
        Ok(())
    }
}

/// Loss used for classification heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationLoss {
    /// Softmax cross-entropy `-log p_label`.
    #[default]
    CrossEntropy,
    /// Binary cross-entropy of per-class sigmoids against the one-hot label,
    /// summed over classes.
    OneHotBce,
}

fn check_labels(logits: &Tensor<impl Scalar>, labels: &[usize]) -> Result<(usize, usize)> {
    contract!(logits.rank() == 2, "logits must be B x C, got {:?}", logits.shape());
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    contract!(labels.len() == b, "{} labels for a batch of {b}", labels.len());
    for &l in labels {
        contract!(l < c, "label {l} out of range for {c} classes");
    }
    Ok((b, c))
}

/// Batch mean of the softmax cross-entropy.
pub fn loss_classification<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (b, c) = check_labels(logits, labels)?;
    let (mx, _) = logits.detach().max_axis(1)?;
    let shifted = logits.sub(&mx.broadcast_axis(1, c)?)?;
    let lse = shifted.exp().sum_axis(1)?.ln();
    let rows: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * c + l).collect();
    let picked = shifted.reshape(&[b * c, 1])?.gather_rows(&rows)?.reshape(&[b])?;
    Ok(lse.sub(&picked)?.mean())
}

fn bce<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let eps = T::lit(PROB_EPS);
    let p = p.clamp(eps, T::one() - eps);
    let one_minus = p.neg().add_scalar(T::one()).ln();
    let yc = y.neg().add_scalar(T::one());
    Ok(y.mul(&p.ln())?.add(&yc.mul(&one_minus)?)?.neg())
}

/// Batch mean over examples of the one-hot BCE summed over classes.
pub fn loss_classification_bce<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (b, c) = check_labels(logits, labels)?;
    let mut onehot = vec![T::zero(); b * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = T::one();
    }
    let y = Tensor::new(onehot, vec![b, c])?;
    Ok(bce(&logits.sigmoid(), &y)?.sum().scale(T::one() / T::lit(b as f64)))
}

/// Two-way Chamfer distance between prediction and input.
pub fn loss_reconstruction<T: Scalar>(predicted: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    contract!(
        predicted.numel() > 0 && input.numel() > 0,
        "reconstruction loss needs nonempty clouds"
    );
    Ok(chamfer_distance(predicted, input)?)
}

/// Batch mean of `-[y log s + (1 - y) log(1 - s)]`, with `s` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn loss_retrieval<T: Scalar>(score: &Tensor<T>, is_match: &[bool]) -> Result<Tensor<T>> {
    contract!(
        score.numel() == is_match.len(),
        "{} scores for {} labels",
        score.numel(),
        is_match.len()
    );
    let y = Tensor::new(
        is_match.iter().map(|&m| if m { T::one() } else { T::zero() }).collect(),
        score.shape().to_vec(),
    )?;
    Ok(bce(score, &y)?.mean())
}

/// Chamfer distance between the source moved by the predicted transform and
/// the template. All tensors are batched.
pub fn loss_pose<T: Scalar>(
    euler_deg: &Tensor<T>,
    translation: &Tensor<T>,
    source: &Tensor<T>,
    template: &Tensor<T>,
) -> Result<Tensor<T>> {
    let moved = rigid_transform(source, euler_deg, translation)?;
    Ok(chamfer_distance(&moved, template)?)
}

/// Targets of one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Labels(Vec<usize>),
    /// Reconstruct the first input.
    Input,
    Match(Vec<bool>),
    /// Registration ground truth; the loss itself only needs the clouds.
    Pose {
        euler_deg: Vec<[f64; 3]>,
        translation: Vec<[f64; 3]>,
    },
}

/// A batch for one task: full-resolution input clouds (`B × m × 3` each)
/// and targets.
#[derive(Clone, Debug)]
pub struct TaskBatch<T: Scalar> {
    pub kind: TaskKind,
    pub inputs: Vec<Tensor<T>>,
    pub target: Target,
}

impl<T: Scalar> TaskBatch<T> {
    pub fn len(&self) -> usize {
        self.inputs[0].shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Task loss of `model` (bound parameters `p`) when it sees `seen` in place
/// of the batch's full inputs. Targets that are clouds always use the full
/// inputs.
pub fn task_loss<T: Scalar>(
    model: &TaskModel,
    p: &[Tensor<T>],
    batch: &TaskBatch<T>,
    seen: &[Tensor<T>],
    cls: ClassificationLoss,
) -> Result<Tensor<T>> {
    contract!(
        model.kind == batch.kind,
        "{} model given a {} batch",
        model.kind,
        batch.kind
    );
    match (task_forward(model, p, seen)?, &batch.target) {
        (TaskOutput::Logits(l), Target::Labels(y)) => match cls {
            ClassificationLoss::CrossEntropy => loss_classification(&l, y),
            ClassificationLoss::OneHotBce => loss_classification_bce(&l, y),
        },
        (TaskOutput::Cloud(c), Target::Input) => loss_reconstruction(&c, &batch.inputs[0]),
        (TaskOutput::Score(s), Target::Match(y)) => loss_retrieval(&s, y),
        (
            TaskOutput::Pose {
                euler_deg,
                translation,
            },
            Target::Pose { .. },
        ) => loss_pose(&euler_deg, &translation, &batch.inputs[0], &batch.inputs[1]),
        _ => Err(crate::Error::Contract(format!(
            "target does not match task {}",
            batch.kind
        ))),
    }
}

/// The sampler applied to every input of a batch.
#[derive(Clone, Debug)]
pub struct SamplerPass<T: Scalar> {
    /// Soft-sampled stand-in for each batch input, `B × n × 3`.
    pub sampled: Vec<Tensor<T>>,
    /// One pass over all inputs stacked along the batch axis.
    pub sample: SoftSample<T>,
    /// All inputs stacked, `(arity · B) × m × 3`.
    pub stacked: Tensor<T>,
    pub log_temp: Tensor<T>,
}

/// Runs the sampler (bound parameters `theta`) over every input of `batch`.
pub fn sampler_pass<T: Scalar>(
    sampler: &SamplerModel,
    theta: &[Tensor<T>],
    batch: &TaskBatch<T>,
) -> Result<SamplerPass<T>> {
    let b = batch.len();
    let stacked = if batch.inputs.len() == 1 {
        batch.inputs[0].clone()
    } else {
        Tensor::concat(&batch.inputs, 0)?
    };
    let sample = crate::models::sampler_forward(sampler, theta, &stacked)?;
    let sampled = (0..batch.inputs.len())
        .map(|i| sample.soft.narrow(0, i * b, b))
        .collect::<Result<_, _>>()?;
    Ok(SamplerPass {
        sampled,
        sample,
        stacked,
        log_temp: theta[LOG_TEMP].clone(),
    })
}

/// Sum over the pool of each frozen model's task loss on the sampled inputs.
pub fn loss_sampler_task_joint<T: Scalar>(
    pass: &SamplerPass<T>,
    pool: &[&TaskModel],
    batch: &TaskBatch<T>,
    cls: ClassificationLoss,
) -> Result<Tensor<T>> {
    contract!(!pool.is_empty(), "joint loss needs at least one model");
    let mut total: Option<Tensor<T>> = None;
    for model in pool {
        contract!(model.frozen, "task model {} must be frozen", model.uid);
        contract!(
            model.kind == pool[0].kind,
            "mixed task kinds in pool: {} and {}",
            pool[0].kind,
            model.kind
        );
        let l = task_loss(model, &model.bind(), batch, &pass.sampled, cls)?;
        total = Some(match total {
            Some(t) => t.add(&l)?,
            None => l,
        });
    }
    Ok(total.expect("nonempty pool"))
}

/// Single frozen model's task loss on the sampled inputs.
pub fn loss_sampler_task_single<T: Scalar>(
    pass: &SamplerPass<T>,
    model: &TaskModel,
    batch: &TaskBatch<T>,
    cls: ClassificationLoss,
) -> Result<Tensor<T>> {
    loss_sampler_task_joint(pass, &[model], batch, cls)
}

/// `mean_q min_p |q-p|² + gamma_max · max_q min_p |q-p|² + gamma_cov ·
/// mean_p min_q |p-q|²`, averaged over the batch. `q` is `B × n × 3`, `p`
/// is `B × m × 3`.
pub fn loss_simplification<T: Scalar>(
    q: &Tensor<T>,
    p: &Tensor<T>,
    gamma_max: f64,
    gamma_cov: f64,
) -> Result<Tensor<T>> {
    contract!(
        q.rank() == 3 && p.rank() == 3 && q.numel() > 0 && p.numel() > 0,
        "simplification loss needs nonempty B x n x 3 batches"
    );
    let d = q.pairwise_sqdist(p)?;
    let (to_input, _) = d.min_axis(2)?;
    let mean_term = to_input.mean();
    let (worst, _) = to_input.max_axis(1)?;
    let (coverage, _) = d.min_axis(1)?;
    Ok(mean_term
        .add(&worst.mean().scale(T::lit(gamma_max)))?
        .add(&coverage.mean().scale(T::lit(gamma_cov)))?)
}

/// Squared temperature, from its logarithm.
pub fn loss_projection<T: Scalar>(log_temp: &Tensor<T>) -> Tensor<T> {
    log_temp.scale(T::lit(2.0)).exp()
}

pub fn loss_total<T: Scalar>(
    task: &Tensor<T>,
    simp: &Tensor<T>,
    proj: &Tensor<T>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    w.validate()?;
    Ok(task
        .scale(T::lit(w.w_task))
        .add(&simp.scale(T::lit(w.w_simp)))?
        .add(&proj.scale(T::lit(w.w_proj)))?)
}

#[cfg(test)]
mod tests;
