use crate::error::{contract, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Two-way Chamfer distance with squared distances, mean-reduced per
/// direction and summed:
/// `mean_a min_b |a-b|² + mean_b min_a |a-b|²`.
///
/// Accepts `n × 3` and `m × 3` clouds, or `B × n × 3` and `B × m × 3`
/// batches, for which the result is the mean over the batch.
pub fn chamfer_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    contract!(
        a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
        "chamfer_distance: expected matching rank-2 or rank-3 clouds, got {:?} and {:?}",
        a.shape(),
        b.shape()
    );
    let d = a.pairwise_sqdist(b)?;
    let last = d.rank() - 1;
    let forward = d.min_axis(last)?.0.mean();
    let backward = d.min_axis(last - 1)?.0.mean();
    Ok(forward.add(&backward)?)
}
