use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::batches::stack_clouds;
use crate::data::{
    derive_seed, gen_registration_pair, gen_retrieval_episode, RegistrationPair,
    RetrievalEpisode, Sample,
};
use crate::error::{contract, Error, Result};
use crate::geometry::{
    farthest_point_sample, inverse_density_sample, random_sample, rotation_angle_deg,
    rotation_matrix, PointCloud,
};
use crate::models::{match_indices, sampler_forward, task_forward, SamplerModel, TaskKind, TaskModel, TaskOutput};
use crate::tensor::{no_grad, Tensor};

/// Clouds per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Whether a learned sampler is evaluated on its soft points or on the
/// hard-matched input subset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Soft,
    #[default]
    Matched,
}

/// How evaluation clouds are reduced before they reach a task model.
#[derive(Clone, Copy, Debug)]
pub enum SamplingMethod<'a> {
    /// The full cloud (ratio 1).
    Identity,
    Learned {
        sampler: &'a SamplerModel,
        mode: EvalMode,
    },
    Fps {
        n: usize,
    },
    Random {
        n: usize,
        seed: u64,
    },
    Idis {
        n: usize,
        k: usize,
    },
}

impl SamplingMethod<'_> {
    /// Indices per cloud for index-based methods; `None` for soft sampling.
    fn indices(&self, clouds: &[&PointCloud<f64>], offset: usize) -> Result<Option<Vec<Vec<usize>>>> {
        Ok(Some(match *self {
            SamplingMethod::Identity => clouds.iter().map(|c| (0..c.len()).collect()).collect(),
            SamplingMethod::Fps { n } => clouds
                .iter()
                .map(|c| farthest_point_sample(c, n, 0))
                .collect::<Result<_>>()?,
            SamplingMethod::Random { n, seed } => clouds
                .iter()
                .enumerate()
                .map(|(i, c)| random_sample(c, n, derive_seed(seed, (offset + i) as u64)))
                .collect::<Result<_>>()?,
            SamplingMethod::Idis { n, k } => clouds
                .iter()
                .map(|c| inverse_density_sample(c, n, k))
                .collect::<Result<_>>()?,
            SamplingMethod::Learned { sampler, mode } => {
                let out = no_grad(|| {
                    sampler_forward(sampler, &sampler.params.bind::<f64>(false), &stack_clouds(clouds)?)
                })?;
                if mode == EvalMode::Soft {
                    return Ok(None);
                }
                let n = sampler.spec.n;
                clouds
                    .iter()
                    .enumerate()
                    .map(|(i, c)| match_indices(&out.soft.data()[i * n * 3..(i + 1) * n * 3], c, n))
                    .collect()
            }
        }))
    }

    /// Reduced clouds stacked into `B × n × 3`. `offset` is the position of
    /// the first cloud in the evaluation stream (seeds random sampling).
    pub fn apply(&self, clouds: &[&PointCloud<f64>], offset: usize) -> Result<Tensor<f64>> {
        match self.indices(clouds, offset)? {
            Some(idx) => {
                let subsets = clouds
                    .iter()
                    .zip(&idx)
                    .map(|(c, i)| c.select(i))
                    .collect::<Result<Vec<_>>>()?;
                stack_clouds(&subsets.iter().collect::<Vec<_>>())
            }
            None => {
                let SamplingMethod::Learned { sampler, .. } = self else {
                    unreachable!("only learned samplers are soft")
                };
                no_grad(|| {
                    let theta = sampler.params.bind::<f64>(false);
                    Ok(sampler_forward(sampler, &theta, &stack_clouds(clouds)?)?.soft)
                })
            }
        }
    }
}

/// Fixed evaluation data for one task.
#[derive(Clone, Debug)]
pub enum EvalSet {
    Clouds {
        kind: TaskKind,
        clouds: Vec<PointCloud<f64>>,
        labels: Vec<usize>,
    },
    Retrieval(Vec<RetrievalEpisode>),
    Registration(Vec<RegistrationPair>),
}

impl EvalSet {
    /// Builds the evaluation set of `kind` over `samples`. Pair tasks draw
    /// `count` episodes or pairs from `seed`; `n_way` sets the retrieval
    /// episode size.
    pub fn build(kind: TaskKind, samples: &[Sample], count: usize, n_way: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            TaskKind::Classification | TaskKind::Reconstruction => EvalSet::Clouds {
                kind,
                clouds: samples.iter().map(|s| s.cloud.clone()).collect(),
                labels: samples.iter().map(|s| s.label).collect(),
            },
            TaskKind::Retrieval => EvalSet::Retrieval(
                (0..count)
                    .map(|i| gen_retrieval_episode(samples, n_way, derive_seed(seed, i as u64)))
                    .collect::<Result<_>>()?,
            ),
            TaskKind::PoseRegression => EvalSet::Registration(
                (0..count)
                    .map(|i| gen_registration_pair(samples, derive_seed(seed, i as u64)))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            EvalSet::Clouds { kind, .. } => *kind,
            EvalSet::Retrieval(_) => TaskKind::Retrieval,
            EvalSet::Registration(_) => TaskKind::PoseRegression,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EvalSet::Clouds { clouds, .. } => clouds.len(),
            EvalSet::Retrieval(e) => e.len(),
            EvalSet::Registration(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Task metric of one model on `set`, with inputs reduced by `method`:
/// accuracy, mean Chamfer distance, N-way retrieval accuracy, or mean
/// rotation error in degrees.
pub fn model_metric(model: &TaskModel, set: &EvalSet, method: &SamplingMethod) -> Result<f64> {
    contract!(
        model.kind == set.kind(),
        "{} model evaluated on {} data",
        model.kind,
        set.kind()
    );
    contract!(!set.is_empty(), "empty evaluation set");
    let p = no_grad(|| model.params.bind::<f64>(false));
    no_grad(|| match set {
        EvalSet::Clouds { kind, clouds, labels } => {
            let mut total = 0.0;
            for (c, chunk) in clouds.chunks(EVAL_CHUNK).enumerate() {
                let refs: Vec<_> = chunk.iter().collect();
                let seen = method.apply(&refs, c * EVAL_CHUNK)?;
                match task_forward(model, &p, &[seen])? {
                    TaskOutput::Logits(l) => {
                        let classes = l.shape()[1];
                        let labels = &labels[c * EVAL_CHUNK..][..chunk.len()];
                        total += l
                            .data()
                            .chunks(classes)
                            .zip(labels)
                            .filter(|(row, &y)| argmax(row) == y)
                            .count() as f64;
                    }
                    TaskOutput::Cloud(out) => {
                        for (i, cloud) in chunk.iter().enumerate() {
                            let pred = PointCloud::from_flat(&out.data()[i * model.m * 3..(i + 1) * model.m * 3])?;
                            total += pred.chamfer(cloud);
                        }
                    }
                    _ => unreachable!("{kind} outputs logits or clouds"),
                }
            }
            Ok(total / clouds.len() as f64)
        }
        EvalSet::Retrieval(episodes) => {
            let mut correct = 0;
            for (e, ep) in episodes.iter().enumerate() {
                let n_way = ep.candidates.len();
                let q = method.apply(&[&ep.query], e * (n_way + 1))?;
                let cands: Vec<_> = ep.candidates.iter().collect();
                let c = method.apply(&cands, e * (n_way + 1) + 1)?;
                let qs = q.reshape(&q.shape()[1..])?.broadcast_axis(0, n_way)?;
                let TaskOutput::Score(s) = task_forward(model, &p, &[qs, c])? else {
                    unreachable!("retrieval outputs scores")
                };
                if argmax(s.data()) == ep.answer {
                    correct += 1;
                }
            }
            Ok(correct as f64 / episodes.len() as f64)
        }
        EvalSet::Registration(pairs) => {
            let mut total = 0.0;
            for (c, chunk) in pairs.chunks(EVAL_CHUNK).enumerate() {
                let src: Vec<_> = chunk.iter().map(|p| &p.source).collect();
                let tpl: Vec<_> = chunk.iter().map(|p| &p.template).collect();
                let off = 2 * c * EVAL_CHUNK;
                let inputs = [method.apply(&src, off)?, method.apply(&tpl, off + chunk.len())?];
                let TaskOutput::Pose { euler_deg, .. } = task_forward(model, &p, &inputs)? else {
                    unreachable!("pose regression outputs a pose")
                };
                for (pair, e) in chunk.iter().zip(euler_deg.data().chunks(3)) {
                    let pred = rotation_matrix([e[0], e[1], e[2]]);
                    total += rotation_angle_deg(&pred, &rotation_matrix(pair.euler_deg));
                }
            }
            Ok(total / pairs.len() as f64)
        }
    })
}

/// Per-model metrics on a test pool and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub metric: String,
    pub per_model: BTreeMap<String, f64>,
    pub mean: f64,
}

fn pool_metrics(pool: &[TaskModel], set: &EvalSet, method: &SamplingMethod) -> Result<PoolMetrics> {
    contract!(!pool.is_empty(), "evaluation pool is empty");
    let mut per_model = BTreeMap::new();
    for model in pool {
        per_model.insert(model.uid.clone(), model_metric(model, set, method)?);
    }
    let mean = per_model.values().sum::<f64>() / per_model.len() as f64;
    Ok(PoolMetrics {
        metric: set.kind().metric_name().to_string(),
        per_model,
        mean,
    })
}

/// Checks that no model of `pool` has shaped `sampler`.
pub fn check_disjoint(sampler: &SamplerModel, pool: &[TaskModel]) -> Result<()> {
    let overlap: Vec<&str> = pool
        .iter()
        .filter(|m| sampler.trained_on.contains(&m.uid))
        .map(|m| m.uid.as_str())
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::PoolOverlap(format!(
            "evaluation models {overlap:?} were used to train the sampler"
        )))
    }
}

/// Metrics of a learned sampler on a held-out pool. Fails if any pool model
/// took part in training the sampler.
pub fn evaluate(sampler: &SamplerModel, pool: &[TaskModel], set: &EvalSet, mode: EvalMode) -> Result<PoolMetrics> {
    check_disjoint(sampler, pool)?;
    pool_metrics(pool, set, &SamplingMethod::Learned { sampler, mode })
}

/// Metrics of a classical or identity sampling method on a pool.
pub fn evaluate_method(pool: &[TaskModel], set: &EvalSet, method: &SamplingMethod) -> Result<PoolMetrics> {
    pool_metrics(pool, set, method)
}
