use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, PointCloud};
use crate::error::{contract, Result};
use crate::Scalar;

/// Greedy farthest point sampling: each next index maximizes the minimum
/// distance to the points already chosen. Ties go to the lowest index.
pub fn farthest_point_sample<T: Scalar>(
    cloud: &PointCloud<T>,
    n: usize,
    start: usize,
) -> Result<Vec<usize>> {
    let m = cloud.len();
    contract!(n >= 1 && n <= m, "farthest_point_sample: need 1 <= n <= m (n={n}, m={m})");
    contract!(start < m, "farthest_point_sample: start {start} out of range for m={m}");
    Ok(farthest_point_fill(cloud, &[start], n))
}

/// Extends the distinct indices in `chosen` to `n` indices by continuing the
/// farthest-point greedy from that set. `n` is capped at the cloud size.
pub fn farthest_point_fill<T: Scalar>(
    cloud: &PointCloud<T>,
    chosen: &[usize],
    n: usize,
) -> Vec<usize> {
    let pts = cloud.points();
    let m = pts.len();
    let n = n.min(m);
    let mut out = chosen.to_vec();
    let mut taken = vec![false; m];
    for &c in chosen {
        taken[c] = true;
    }
    let mut min_d = vec![T::infinity(); m];
    for &c in chosen {
        for (j, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(&pts[c], &pts[j]));
        }
    }
    while out.len() < n {
        let mut best = None;
        for j in 0..m {
            if taken[j] {
                continue;
            }
            match best {
                Some(b) if min_d[j] <= min_d[b] => {}
                _ => best = Some(j),
            }
        }
        let b = best.expect("fewer chosen than points");
        taken[b] = true;
        out.push(b);
        for (j, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(&pts[b], &pts[j]));
        }
    }
    out
}

/// `n` distinct indices drawn uniformly without replacement.
pub fn random_sample<T: Scalar>(cloud: &PointCloud<T>, n: usize, seed: u64) -> Result<Vec<usize>> {
    let m = cloud.len();
    contract!(n <= m, "random_sample: n={n} exceeds m={m}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, m, n).into_vec())
}

/// Deterministic inverse-density sampling: scores each point by the summed
/// distance to its `k` nearest neighbours and keeps the `n` sparsest
/// (highest score, lowest index on ties).
pub fn inverse_density_sample<T: Scalar>(
    cloud: &PointCloud<T>,
    n: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let m = cloud.len();
    contract!(n <= m, "inverse_density_sample: n={n} exceeds m={m}");
    contract!(k >= 1 && k < m, "inverse_density_sample: need 1 <= k < m (k={k}, m={m})");
    let pts = cloud.points();
    let scores: Vec<T> = (0..m)
        .map(|i| {
            let mut d: Vec<T> = (0..m)
                .filter(|&j| j != i)
                .map(|j| sq_dist(&pts[i], &pts[j]).sqrt())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            d[..k].iter().copied().sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order.truncate(n);
    Ok(order)
}
