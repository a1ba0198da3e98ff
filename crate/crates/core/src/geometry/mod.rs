//! Point clouds, classical task-agnostic samplers, Chamfer distance and
//! rigid transforms.

mod chamfer;
mod io;
mod rigid;
mod sampling;

pub use chamfer::chamfer_distance;
pub use io::{read_pcb, read_xyz, write_pcb, PCB_MAGIC};
pub use rigid::{apply_rigid, rigid_transform, rotation_angle_deg, rotation_matrix, Mat3};
pub use sampling::{
    farthest_point_fill, farthest_point_sample, inverse_density_sample, random_sample,
};

use crate::error::{contract, Error, Result};
use crate::tensor::{no_grad, Tensor};
use crate::Scalar;

/// An ordered list of 3-D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T: Scalar> {
    points: Vec<[T; 3]>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        contract!(!points.is_empty(), "point cloud must be nonempty");
        contract!(
            points.iter().flatten().all(|v| v.is_finite()),
            "point cloud coordinates must be finite"
        );
        Ok(Self { points })
    }

    /// Builds a cloud from a flat `x y z x y z ...` buffer.
    pub fn from_flat(data: &[T]) -> Result<Self> {
        contract!(data.len() % 3 == 0, "flat buffer length {} not a multiple of 3", data.len());
        Self::new(data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        contract!(
            t.rank() == 2 && t.shape()[1] == 3,
            "expected an m x 3 tensor, got {:?}",
            t.shape()
        );
        Self::from_flat(t.data())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[T; 3]] {
        &self.points
    }

    pub fn flat(&self) -> Vec<T> {
        self.points.iter().flatten().copied().collect()
    }

    /// The cloud as a constant `m × 3` tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.flat(), vec![self.len(), 3]).expect("nonempty cloud")
    }

    /// Sub-cloud at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        contract!(
            idx.iter().all(|&i| i < self.len()),
            "index out of range for cloud of {} points",
            self.len()
        );
        Self::new(idx.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> [T; 3] {
        let n = T::from_usize(self.len()).expect("point count fits scalar");
        let mut c = [T::zero(); 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] = c[d] + p[d];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> T {
        self.points
            .iter()
            .map(|p| norm(p))
            .fold(T::zero(), T::max)
    }

    /// Translates the centroid to the origin and scales the farthest point
    /// to unit norm.
    pub fn normalized(&self) -> Result<Self> {
        let c = self.centroid();
        let centered: Vec<[T; 3]> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let scale = centered.iter().map(norm).fold(T::zero(), T::max);
        if scale <= T::zero() {
            return Err(Error::Degenerate("all points coincide".into()));
        }
        Self::new(centered.into_iter().map(|p| p.map(|v| v / scale)).collect())
    }

    /// Two-way Chamfer distance to `other` as a plain value.
    pub fn chamfer(&self, other: &PointCloud<T>) -> T {
        no_grad(|| chamfer_distance(&self.to_tensor(), &other.to_tensor()))
            .expect("nonempty clouds")
            .item()
    }

    /// Mean distance from each point to its nearest other point.
    pub fn mean_nn_spacing(&self) -> T {
        let n = self.len();
        if n < 2 {
            return T::zero();
        }
        let total: T = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| sq_dist(&self.points[i], &self.points[j]))
                    .fold(T::infinity(), T::min)
                    .sqrt()
            })
            .sum();
        total / T::from_usize(n).expect("point count fits scalar")
    }
}

pub(crate) fn norm<T: Scalar>(p: &[T; 3]) -> T {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Input size `m`, output size `n`, and the reported ratio `m / n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleSpec {
    pub m: usize,
    pub n: usize,
}

impl SampleSpec {
    /// `m > n >= 1`; use [`SampleSpec::identity`] for ratio 1.
    pub fn new(m: usize, n: usize) -> Result<Self> {
        contract!(n >= 1 && m > n, "sample spec requires m > n >= 1 (m={m}, n={n})");
        Ok(Self { m, n })
    }

    pub fn identity(m: usize) -> Self {
        Self { m, n: m }
    }

    /// Builds the spec for an integer sampling ratio that divides `m`.
    pub fn from_ratio(m: usize, ratio: usize) -> Result<Self> {
        contract!(
            ratio >= 1 && m % ratio == 0,
            "ratio {ratio} must divide m={m}"
        );
        if ratio == 1 {
            Ok(Self::identity(m))
        } else {
            Self::new(m, m / ratio)
        }
    }

    pub fn ratio(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn is_identity(&self) -> bool {
        self.m == self.n
    }
}
