use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::error::{contract, Result};
use crate::geometry::{apply_rigid, PointCloud};

/// Largest Euler angle (degrees) of a retrieval candidate's shift/rotation.
pub const RETRIEVAL_MAX_ANGLE: f64 = 10.0;
/// Largest translation component of a retrieval candidate.
pub const RETRIEVAL_MAX_SHIFT: f64 = 0.05;
/// Jitter added to retrieval candidates.
pub const RETRIEVAL_JITTER: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalEpisode {
    pub query: PointCloud<f64>,
    pub candidates: Vec<PointCloud<f64>>,
    pub answer: usize,
    /// `(euler_deg, translation)` applied to each candidate before jitter.
    pub transforms: Vec<([f64; 3], [f64; 3])>,
}

/// A labelled pair for training a match scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalPair {
    pub a: PointCloud<f64>,
    pub b: PointCloud<f64>,
    pub is_match: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationPair {
    pub source: PointCloud<f64>,
    pub template: PointCloud<f64>,
    pub euler_deg: [f64; 3],
    pub translation: [f64; 3],
}

type Transform = ([f64; 3], [f64; 3]);

/// Random small shift/rotation of `cloud`, then jitter.
fn perturb(cloud: &PointCloud<f64>, rng: &mut ChaCha8Rng) -> Result<(PointCloud<f64>, Transform)> {
    let euler = [0; 3].map(|_| rng.random_range(-RETRIEVAL_MAX_ANGLE..RETRIEVAL_MAX_ANGLE));
    let t = [0; 3].map(|_| rng.random_range(-RETRIEVAL_MAX_SHIFT..RETRIEVAL_MAX_SHIFT));
    let moved = apply_rigid(cloud, euler, t)?;
    let noise = Normal::new(0.0, RETRIEVAL_JITTER).expect("positive jitter");
    let cloud = PointCloud::new(
        moved
            .points()
            .iter()
            .map(|p| p.map(|v| v + noise.sample(rng)))
            .collect(),
    )?;
    Ok((cloud, (euler, t)))
}

fn same_class_other(samples: &[Sample], q: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    let label = samples[q].label;
    let same: Vec<usize> = (0..samples.len())
        .filter(|&i| i != q && samples[i].label == label)
        .collect();
    (!same.is_empty()).then(|| same[rng.random_range(0..same.len())])
}

/// An `n_way` episode: the answer is a perturbed copy of the query, the
/// distractors are perturbed copies of other clouds, at least one of them
/// from the query's class.
pub fn gen_retrieval_episode(
    samples: &[Sample],
    n_way: usize,
    seed: u64,
) -> Result<RetrievalEpisode> {
    contract!(n_way >= 2, "retrieval episodes need N >= 2, got {n_way}");
    contract!(
        samples.len() >= n_way,
        "retrieval episode needs at least {n_way} clouds, have {}",
        samples.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = rng.random_range(0..samples.len());
    let hard = same_class_other(samples, q, &mut rng);
    contract!(hard.is_some(), "no second cloud shares the query's class");
    let mut picks = vec![q, hard.expect("checked")];
    while picks.len() < n_way {
        let i = rng.random_range(0..samples.len());
        if !picks.contains(&i) {
            picks.push(i);
        }
    }
    picks.shuffle(&mut rng);
    let answer = picks.iter().position(|&i| i == q).expect("query is a candidate");
    let (candidates, transforms) = picks
        .iter()
        .map(|&i| perturb(&samples[i].cloud, &mut rng))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(RetrievalEpisode {
        query: samples[q].cloud.clone(),
        candidates,
        answer,
        transforms,
    })
}

/// A positive pair with probability 1/2; negatives are same-class hard
/// negatives half of the time.
pub fn gen_retrieval_pair(samples: &[Sample], seed: u64) -> Result<RetrievalPair> {
    contract!(samples.len() >= 2, "retrieval pairs need at least two clouds");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = rng.random_range(0..samples.len());
    let is_match = rng.random::<bool>();
    let other = if is_match {
        q
    } else {
        let hard = if rng.random::<bool>() {
            same_class_other(samples, q, &mut rng)
        } else {
            None
        };
        hard.unwrap_or_else(|| loop {
            let i = rng.random_range(0..samples.len());
            if i != q {
                break i;
            }
        })
    };
    Ok(RetrievalPair {
        a: samples[q].cloud.clone(),
        b: perturb(&samples[other].cloud, &mut rng)?.0,
        is_match,
    })
}

/// Source cloud and its rigidly moved template, with Euler angles in
/// [-45°, 45°] and translation components in [-1, 1].
pub fn gen_registration_pair(samples: &[Sample], seed: u64) -> Result<RegistrationPair> {
    contract!(!samples.is_empty(), "registration pairs need a nonempty split");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = samples[rng.random_range(0..samples.len())].cloud.clone();
    let euler_deg = [0; 3].map(|_| rng.random_range(-45.0..=45.0));
    let translation = [0; 3].map(|_| rng.random_range(-1.0..=1.0));
    let template = apply_rigid(&source, euler_deg, translation)?;
    Ok(RegistrationPair {
        source,
        template,
        euler_deg,
        translation,
    })
}
