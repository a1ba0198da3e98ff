use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{dense, encode_batch, ENCODER_HIDDEN, ENCODER_PARAMS, FEATURE_DIM};
use super::ParamSet;
use crate::error::{contract, Error, Result};
use crate::geometry::{farthest_point_fill, sq_dist, PointCloud, SampleSpec};
use crate::tensor::Tensor;
use crate::Scalar;

pub const DEFAULT_K_PROJ: usize = 4;
const GENERATOR_HIDDEN: usize = 64;
/// Half-width of the uniform spread of the generator's initial output bias.
const GENERATOR_BIAS_SPREAD: f64 = 0.5;
/// Index of the log-temperature scalar in the parameter list.
pub const LOG_TEMP: usize = ENCODER_PARAMS + 4;

/// Learnable sampler: encoder, point generator and soft projection with a
/// log-parameterized temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerModel {
    pub spec: SampleSpec,
    pub k_proj: usize,
    pub seed: u64,
    pub params: ParamSet,
    /// Task-model UIDs whose losses have shaped these weights.
    pub trained_on: BTreeSet<String>,
}

impl SamplerModel {
    pub fn new(spec: SampleSpec, k_proj: usize, seed: u64) -> Result<Self> {
        contract!(
            spec.n < spec.m,
            "learned sampler needs n < m (n={}, m={})",
            spec.n,
            spec.m
        );
        contract!(
            k_proj >= 1 && k_proj <= spec.m,
            "k_proj={k_proj} must lie in 1..={}",
            spec.m
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.push_dense("enc.0", 3, ENCODER_HIDDEN, &mut rng);
        params.push_dense("enc.1", ENCODER_HIDDEN, FEATURE_DIM, &mut rng);
        params.push_dense("gen.0", FEATURE_DIM, GENERATOR_HIDDEN, &mut rng);
        params.push_dense("gen.1", GENERATOR_HIDDEN, spec.n * 3, &mut rng);
        let bias = &mut params.get_mut(LOG_TEMP - 1).data;
        for v in bias.iter_mut() {
            *v = rng.random_range(-GENERATOR_BIAS_SPREAD..GENERATOR_BIAS_SPREAD);
        }
        params.push("log_temp", vec![], vec![0.0]);
        Ok(Self {
            spec,
            k_proj,
            seed,
            params,
            trained_on: BTreeSet::new(),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.params.get(LOG_TEMP).data[0].exp()
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.params.get_mut(LOG_TEMP).data[0] = t.ln();
    }
}

/// Output of one sampler pass over a batch.
#[derive(Clone, Debug)]
pub struct SoftSample<T: Scalar> {
    /// Raw generator output `B × n × 3`.
    pub generated: Tensor<T>,
    /// Soft-projected points `B × n × 3`.
    pub soft: Tensor<T>,
    /// Projection weights `B × n × k`.
    pub weights: Tensor<T>,
    /// Per-cloud input indices of the `k` neighbours, laid out `B × n × k`.
    pub neighbor_idx: Vec<usize>,
}

/// Indices of the `k` nearest points of `cloud` (`m × 3` row-major) to `q`,
/// nearest first, ties to the lowest index.
fn knn<T: Scalar>(cloud: &[T], q: [T; 3], k: usize) -> Vec<usize> {
    let mut d: Vec<(T, usize)> = cloud
        .chunks(3)
        .enumerate()
        .map(|(i, p)| (sq_dist(&[p[0], p[1], p[2]], &q), i))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Replaces each generated point by a softmax-weighted mix of its `k`
/// nearest input points, with weights `softmax(-d² / t²)` and
/// `t = exp(log_temp)`.
pub fn soft_project<T: Scalar>(
    generated: &Tensor<T>,
    clouds: &Tensor<T>,
    log_temp: &Tensor<T>,
    k: usize,
) -> Result<SoftSample<T>> {
    let (b, n) = (generated.shape()[0], generated.shape()[1]);
    let m = clouds.shape()[1];
    contract!(
        clouds.rank() == 3 && clouds.shape()[0] == b && k >= 1 && k <= m,
        "soft_project: clouds {:?}, generated {:?}, k={k}",
        clouds.shape(),
        generated.shape()
    );
    if generated.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalAbort("soft_project: non-finite generated points".into()));
    }
    let mut local = Vec::with_capacity(b * n * k);
    let mut global = Vec::with_capacity(b * n * k);
    for bi in 0..b {
        let cloud = &clouds.data()[bi * m * 3..(bi + 1) * m * 3];
        for qi in 0..n {
            let q = &generated.data()[(bi * n + qi) * 3..][..3];
            for i in knn(cloud, [q[0], q[1], q[2]], k) {
                local.push(i);
                global.push(bi * m + i);
            }
        }
    }
    let neighbors = clouds
        .reshape(&[b * m, 3])?
        .gather_rows(&global)?
        .reshape(&[b * n, k, 3])?;
    let queries = generated.reshape(&[b * n, 3])?.broadcast_axis(1, k)?;
    let d2 = neighbors.sub(&queries)?.square().sum_axis(2)?;
    let inv_t2 = log_temp.scale(T::lit(-2.0)).exp().neg();
    let weights = d2.scale_by(&inv_t2)?.softmax()?;
    let soft = weights
        .reshape(&[b * n, 1, k])?
        .matmul(&neighbors)?
        .reshape(&[b, n, 3])?;
    Ok(SoftSample {
        generated: generated.clone(),
        soft,
        weights: weights.reshape(&[b, n, k])?,
        neighbor_idx: local,
    })
}

/// Generates and soft-projects `n` points for every cloud of the
/// `B × m × 3` batch, using bound sampler parameters `theta`.
pub fn sampler_forward<T: Scalar>(
    sampler: &SamplerModel,
    theta: &[Tensor<T>],
    clouds: &Tensor<T>,
) -> Result<SoftSample<T>> {
    let SampleSpec { m, n } = sampler.spec;
    contract!(n < m, "sampler_forward needs n < m (n={n}, m={m})");
    contract!(
        clouds.rank() == 3 && clouds.shape()[1] == m && clouds.shape()[2] == 3,
        "sampler expects B x {m} x 3 input, got {:?}",
        clouds.shape()
    );
    let b = clouds.shape()[0];
    let feat = encode_batch(&theta[..ENCODER_PARAMS], clouds)?;
    let g = &theta[ENCODER_PARAMS..LOG_TEMP];
    let h = dense(&feat, &g[0], &g[1])?.relu();
    let generated = dense(&h, &g[2], &g[3])?.reshape(&[b, n, 3])?;
    soft_project(&generated, clouds, &theta[LOG_TEMP], sampler.k_proj)
}

/// Hard selection from soft points (`n × 3` row-major): each point snaps to
/// its nearest input index, duplicates are dropped in generator order, and
/// the shortfall is filled by farthest point sampling from the chosen set.
pub fn match_indices<T: Scalar>(soft: &[T], cloud: &PointCloud<T>, n: usize) -> Vec<usize> {
    let flat = cloud.flat();
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for q in soft.chunks(3) {
        let i = knn(&flat, [q[0], q[1], q[2]], 1)[0];
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    farthest_point_fill(cloud, &chosen, n)
}

/// Exactly `n` distinct input indices chosen by the sampler for `cloud`.
pub fn sampler_match(sampler: &SamplerModel, cloud: &PointCloud<f64>) -> Result<Vec<usize>> {
    let out = crate::tensor::no_grad(|| {
        let theta = sampler.params.bind::<f64>(false);
        let batch = cloud.to_tensor().reshape(&[1, cloud.len(), 3])?;
        sampler_forward(sampler, &theta, &batch)
    })?;
    Ok(match_indices(out.soft.data(), cloud, sampler.spec.n))
}
