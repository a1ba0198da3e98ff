//! Rigid transforms with Euler angles in degrees, applied in Z-Y-X intrinsic
//! order: `R = Rz(z) · Ry(y) · Rx(x)` for angles given as `[x, y, z]`.

use super::PointCloud;
use crate::error::{contract, Result};
use crate::tensor::Tensor;
use crate::Scalar;

pub type Mat3<T> = [[T; 3]; 3];

pub fn rotation_matrix<T: Scalar>(euler_deg: [T; 3]) -> Mat3<T> {
    let [x, y, z] = euler_deg.map(|a| a.to_radians());
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sz, cz) = z.sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// `R(euler) · p + t` for every point.
pub fn apply_rigid<T: Scalar>(
    cloud: &PointCloud<T>,
    euler_deg: [T; 3],
    t: [T; 3],
) -> Result<PointCloud<T>> {
    let r = rotation_matrix(euler_deg);
    let pts = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = [T::zero(); 3];
            for (i, row) in r.iter().enumerate() {
                q[i] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + t[i];
            }
            q
        })
        .collect();
    PointCloud::new(pts)
}

/// Rotation angle in degrees of `aᵀ · b`, i.e. the geodesic distance between
/// two rotations.
pub fn rotation_angle_deg<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut trace = T::zero();
    for i in 0..3 {
        for k in 0..3 {
            trace = trace + a[k][i] * b[k][i];
        }
    }
    let c = ((trace - T::one()) / T::lit(2.0)).max(-T::one()).min(T::one());
    c.acos().to_degrees()
}

/// Differentiable batched rigid transform.
///
/// `points` is `B × m × 3`, `euler_deg` and `translation` are `B × 3`.
pub fn rigid_transform<T: Scalar>(
    points: &Tensor<T>,
    euler_deg: &Tensor<T>,
    translation: &Tensor<T>,
) -> Result<Tensor<T>> {
    contract!(
        points.rank() == 3 && points.shape()[2] == 3,
        "rigid_transform: points must be B x m x 3, got {:?}",
        points.shape()
    );
    let b = points.shape()[0];
    let m = points.shape()[1];
    contract!(
        euler_deg.shape() == [b, 3] && translation.shape() == [b, 3],
        "rigid_transform: euler {:?} and translation {:?} must be [{b}, 3]",
        euler_deg.shape(),
        translation.shape()
    );
    let rad = euler_deg.scale(T::lit(std::f64::consts::PI / 180.0));
    let (c, s) = (rad.cos(), rad.sin());
    let col = |t: &Tensor<T>, i: usize| t.narrow(1, i, 1);
    let (cx, cy, cz) = (col(&c, 0)?, col(&c, 1)?, col(&c, 2)?);
    let (sx, sy, sz) = (col(&s, 0)?, col(&s, 1)?, col(&s, 2)?);
    let czsy = cz.mul(&sy)?;
    let szsy = sz.mul(&sy)?;
    let entries = [
        cz.mul(&cy)?,
        czsy.mul(&sx)?.sub(&sz.mul(&cx)?)?,
        czsy.mul(&cx)?.add(&sz.mul(&sx)?)?,
        sz.mul(&cy)?,
        szsy.mul(&sx)?.add(&cz.mul(&cx)?)?,
        szsy.mul(&cx)?.sub(&cz.mul(&sx)?)?,
        sy.neg(),
        cy.mul(&sx)?,
        cy.mul(&cx)?,
    ];
    let rot = Tensor::concat(&entries, 1)?.reshape(&[b, 3, 3])?;
    let rotated = points.matmul(&rot.transpose()?)?;
    Ok(rotated.add(&translation.broadcast_axis(1, m)?)?)
}
