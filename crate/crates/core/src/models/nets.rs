//! Small MLP building blocks over bound parameter slices.

use crate::tensor::{Result, Tensor};
use crate::Scalar;

pub const FEATURE_DIM: usize = 64;
pub const ENCODER_HIDDEN: usize = 32;
pub const HEAD_HIDDEN: usize = 32;
/// Number of tensors in an encoder's parameter block.
pub const ENCODER_PARAMS: usize = 4;

/// `x · w + b` for `x` of shape `rows × in`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let rows = x.shape()[0];
    x.matmul(w)?.add(&b.broadcast_axis(0, rows)?)
}

/// Two dense layers with a relu in between.
pub fn mlp2<T: Scalar>(x: &Tensor<T>, p: &[Tensor<T>]) -> Result<Tensor<T>> {
    dense(&dense(x, &p[0], &p[1])?.relu(), &p[2], &p[3])
}

/// Shared point encoder: per-point MLP 3→32→64 (relu after both layers),
/// then a max over points. Maps `B × m × 3` to `B × 64`.
pub fn encode_batch<T: Scalar>(p: &[Tensor<T>], clouds: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m) = (clouds.shape()[0], clouds.shape()[1]);
    let flat = clouds.reshape(&[b * m, 3])?;
    let h = dense(&dense(&flat, &p[0], &p[1])?.relu(), &p[2], &p[3])?.relu();
    Ok(h.reshape(&[b, m, FEATURE_DIM])?.max_axis(1)?.0)
}
