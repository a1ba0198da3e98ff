use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_seed, gen_registration_pair, gen_retrieval_pair, Sample};
use crate::error::{contract, Result};
use crate::geometry::PointCloud;
use crate::losses::{TaskBatch, Target};
use crate::models::TaskKind;
use crate::tensor::Tensor;

/// Stacks equally sized clouds into a `B × m × 3` tensor.
pub fn stack_clouds(clouds: &[&PointCloud<f64>]) -> Result<Tensor<f64>> {
    contract!(!clouds.is_empty(), "cannot stack an empty list of clouds");
    let m = clouds[0].len();
    contract!(
        clouds.iter().all(|c| c.len() == m),
        "clouds in a batch must share their size"
    );
    let data = clouds.iter().flat_map(|c| c.flat()).collect();
    Ok(Tensor::new(data, vec![clouds.len(), m, 3])?)
}

/// Deterministic per-epoch batches of one task drawn from a split.
#[derive(Clone, Copy, Debug)]
pub struct BatchStream<'a> {
    pub kind: TaskKind,
    pub samples: &'a [Sample],
    pub seed: u64,
    pub batch_size: usize,
    /// Caps the number of batches per epoch.
    pub max_batches: Option<usize>,
}

impl<'a> BatchStream<'a> {
    pub fn new(kind: TaskKind, samples: &'a [Sample], seed: u64, batch_size: usize) -> Self {
        Self {
            kind,
            samples,
            seed,
            batch_size,
            max_batches: None,
        }
    }

    pub fn with_max_batches(mut self, max: Option<usize>) -> Self {
        self.max_batches = max;
        self
    }

    pub fn batches_per_epoch(&self) -> usize {
        let full = (self.samples.len() / self.batch_size.max(1)).max(1);
        self.max_batches.map_or(full, |m| m.min(full))
    }

    /// All batches of `epoch`, in order.
    pub fn epoch(&self, epoch: u64) -> Result<Vec<TaskBatch<f64>>> {
        contract!(self.batch_size >= 1, "batch size must be at least 1");
        contract!(!self.samples.is_empty(), "no samples to batch");
        let epoch_seed = derive_seed(self.seed, epoch);
        let count = self.batches_per_epoch();
        let bs = self.batch_size.min(self.samples.len());
        match self.kind {
            TaskKind::Classification | TaskKind::Reconstruction => {
                let mut order: Vec<usize> = (0..self.samples.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
                (0..count)
                    .map(|b| {
                        let items: Vec<&Sample> = order[b * bs..(b + 1) * bs]
                            .iter()
                            .map(|&i| &self.samples[i])
                            .collect();
                        self.cloud_batch(&items)
                    })
                    .collect()
            }
            TaskKind::Retrieval | TaskKind::PoseRegression => (0..count)
                .map(|b| {
                    let seeds: Vec<u64> = (0..bs)
                        .map(|j| derive_seed(epoch_seed, (b * bs + j) as u64))
                        .collect();
                    pair_batch(self.kind, self.samples, &seeds)
                })
                .collect(),
        }
    }

    fn cloud_batch(&self, items: &[&Sample]) -> Result<TaskBatch<f64>> {
        let clouds: Vec<&PointCloud<f64>> = items.iter().map(|s| &s.cloud).collect();
        let target = match self.kind {
            TaskKind::Classification => Target::Labels(items.iter().map(|s| s.label).collect()),
            _ => Target::Input,
        };
        Ok(TaskBatch {
            kind: self.kind,
            inputs: vec![stack_clouds(&clouds)?],
            target,
        })
    }
}

/// A retrieval or registration batch with one generated pair per seed.
pub fn pair_batch(kind: TaskKind, samples: &[Sample], seeds: &[u64]) -> Result<TaskBatch<f64>> {
    match kind {
        TaskKind::Retrieval => {
            let pairs = seeds
                .iter()
                .map(|&s| gen_retrieval_pair(samples, s))
                .collect::<Result<Vec<_>>>()?;
            let a: Vec<_> = pairs.iter().map(|p| &p.a).collect();
            let b: Vec<_> = pairs.iter().map(|p| &p.b).collect();
            Ok(TaskBatch {
                kind,
                inputs: vec![stack_clouds(&a)?, stack_clouds(&b)?],
                target: Target::Match(pairs.iter().map(|p| p.is_match).collect()),
            })
        }
        TaskKind::PoseRegression => {
            let pairs = seeds
                .iter()
                .map(|&s| gen_registration_pair(samples, s))
                .collect::<Result<Vec<_>>>()?;
            let src: Vec<_> = pairs.iter().map(|p| &p.source).collect();
            let tpl: Vec<_> = pairs.iter().map(|p| &p.template).collect();
            Ok(TaskBatch {
                kind,
                inputs: vec![stack_clouds(&src)?, stack_clouds(&tpl)?],
                target: Target::Pose {
                    euler_deg: pairs.iter().map(|p| p.euler_deg).collect(),
                    translation: pairs.iter().map(|p| p.translation).collect(),
                },
            })
        }
        _ => Err(crate::Error::Contract(format!("{kind} batches are not pairs"))),
    }
}
