use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{apply_rigid, PointCloud};
use crate::Result;

/// The eight synthetic shape classes, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Tetrahedron,
    Ellipsoid,
    Helix,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Tetrahedron,
        ShapeClass::Ellipsoid,
        ShapeClass::Helix,
    ];

    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Tetrahedron => "tetrahedron",
            ShapeClass::Ellipsoid => "ellipsoid",
            ShapeClass::Helix => "helix",
        }
    }
}

/// Per-instance variation applied on top of the class surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRegime {
    /// Gaussian jitter standard deviation, before normalization.
    pub jitter: f64,
    /// Maximum absolute rotation (degrees) of the random pose about the
    /// vertical z axis. Shapes otherwise stay upright.
    pub rotation_deg: f64,
    /// Range of the independent per-axis stretch factors.
    pub stretch: (f64, f64),
}

impl Default for ShapeRegime {
    fn default() -> Self {
        Self {
            jitter: 0.01,
            rotation_deg: 180.0,
            stretch: (1.0, 1.0),
        }
    }
}

fn unit_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

/// Directions in antipodal pairs so the centroid is exactly the origin.
fn antithetic_dirs(rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(m);
    while out.len() + 1 < m {
        let d = unit_dir(rng);
        out.push(d);
        out.push(d.map(|x| -x));
    }
    if out.len() < m {
        out.push(unit_dir(rng));
    }
    out
}

fn triangle_point(rng: &mut ChaCha8Rng, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    [0, 1, 2].map(|i| a[i] + u * (b[i] - a[i]) + v * (c[i] - a[i]))
}

fn disk_point(rng: &mut ChaCha8Rng, r: f64, z: f64) -> [f64; 3] {
    let rho = r * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..2.0 * PI);
    [rho * phi.cos(), rho * phi.sin(), z]
}

fn surface(class: ShapeClass, rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 3]> {
    match class {
        ShapeClass::Sphere => antithetic_dirs(rng, m),
        ShapeClass::Ellipsoid => {
            let radii = [1.0, rng.random_range(0.45..0.65), rng.random_range(0.2..0.35)];
            antithetic_dirs(rng, m)
                .into_iter()
                .map(|d| [0, 1, 2].map(|i| d[i] * radii[i]))
                .collect()
        }
        ShapeClass::Cube => (0..m)
            .map(|_| {
                let face = rng.random_range(0..6);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [0; 3].map(|_| rng.random_range(-1.0..1.0));
                p[axis] = sign;
                p
            })
            .collect(),
        ShapeClass::Cylinder => {
            let h: f64 = rng.random_range(1.5..2.5);
            // side area 2πh vs two caps 2π
            let side = h / (h + 1.0);
            (0..m)
                .map(|_| {
                    if rng.random::<f64>() < side {
                        let phi = rng.random_range(0.0..2.0 * PI);
                        [phi.cos(), phi.sin(), rng.random_range(-h / 2.0..h / 2.0)]
                    } else {
                        let z = if rng.random::<bool>() { h / 2.0 } else { -h / 2.0 };
                        disk_point(rng, 1.0, z)
                    }
                })
                .collect()
        }
        ShapeClass::Cone => {
            let h: f64 = rng.random_range(1.5..2.5);
            let slant = (1.0 + h * h).sqrt();
            let lateral = slant / (slant + 1.0);
            (0..m)
                .map(|_| {
                    if rng.random::<f64>() < lateral {
                        // area density grows linearly with the distance from the apex
                        let s = rng.random::<f64>().sqrt();
                        let phi = rng.random_range(0.0..2.0 * PI);
                        [s * phi.cos(), s * phi.sin(), h / 2.0 - s * h]
                    } else {
                        disk_point(rng, 1.0, -h / 2.0)
                    }
                })
                .collect()
        }
        ShapeClass::Torus => {
            let r = rng.random_range(0.25..0.4);
            (0..m)
                .map(|_| loop {
                    let u = rng.random_range(0.0..2.0 * PI);
                    let v = rng.random_range(0.0..2.0 * PI);
                    // rejection keeps the sampling uniform in area
                    if rng.random::<f64>() * (1.0 + r) <= 1.0 + r * v.cos() {
                        let w = 1.0 + r * v.cos();
                        break [w * u.cos(), w * u.sin(), r * v.sin()];
                    }
                })
                .collect()
        }
        ShapeClass::Tetrahedron => {
            let v = [
                [1.0, 1.0, 1.0],
                [1.0, -1.0, -1.0],
                [-1.0, 1.0, -1.0],
                [-1.0, -1.0, 1.0],
            ];
            let faces = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
            (0..m)
                .map(|_| {
                    let f = faces[rng.random_range(0..4)];
                    triangle_point(rng, v[f[0]], v[f[1]], v[f[2]])
                })
                .collect()
        }
        ShapeClass::Helix => {
            let turns = rng.random_range(2.0..3.0);
            let h: f64 = rng.random_range(1.5..2.5);
            (0..m)
                .map(|_| {
                    let s: f64 = rng.random();
                    let a = 2.0 * PI * turns * s;
                    [a.cos(), a.sin(), h * (s - 0.5)]
                })
                .collect()
        }
    }
}

/// One normalized cloud of `class`, a pure function of its arguments.
///
/// Coordinates are rounded through `f32` so that the PCB1 on-disk form is
/// lossless.
pub fn gen_shape(
    class: ShapeClass,
    instance_seed: u64,
    m: usize,
    regime: &ShapeRegime,
) -> Result<PointCloud<f64>> {
    crate::error::contract!(m >= 8, "gen_shape needs m >= 8, got {m}");
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(instance_seed);
    let (lo, hi) = regime.stretch;
    let stretch = [0; 3].map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo });
    let raw: Vec<[f64; 3]> = surface(class, &mut rng, m)
        .into_iter()
        .map(|p| [0, 1, 2].map(|i| p[i] * stretch[i]))
        .collect();
    let r = regime.rotation_deg;
    let euler = [0.0, 0.0, if r > 0.0 { rng.random_range(-r..r) } else { 0.0 }];
    let posed = apply_rigid(&PointCloud::new(raw)?, euler, [0.0; 3])?;
    let jittered = if regime.jitter > 0.0 {
        let noise = Normal::new(0.0, regime.jitter).expect("positive jitter");
        PointCloud::new(
            posed
                .points()
                .iter()
                .map(|p| p.map(|v| v + noise.sample(&mut rng)))
                .collect(),
        )?
    } else {
        posed
    };
    let normalized = jittered.normalized()?;
    PointCloud::new(
        normalized
            .points()
            .iter()
            .map(|p| p.map(|v| v as f32 as f64))
            .collect(),
    )
}
