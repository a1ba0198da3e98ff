use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::*;
use crate::geometry::{apply_rigid, rotation_matrix};

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        train_per_class: 6,
        val_per_class: 3,
        test_per_class: 3,
        seed,
        ..DatasetSpec::default()
    }
}

fn cloud_hash(c: &PointCloud<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in c.flat() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

#[test]
fn default_spec_counts() {
    let spec = DatasetSpec::default();
    let counts: Vec<usize> = Split::ALL
        .iter()
        .map(|&s| (0..8).map(|c| spec.class_count(s, c)).sum())
        .collect();
    assert_eq!(counts, vec![960, 320, 320]);
}

#[test]
fn zero_jitter_sphere_has_unit_norms() {
    let regime = ShapeRegime {
        jitter: 0.0,
        ..ShapeRegime::default()
    };
    for seed in 0..10 {
        let c = gen_shape(ShapeClass::Sphere, seed, 64, &regime).unwrap();
        for p in c.points() {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 1.0).abs() <= 1e-6, "{n}");
        }
    }
}

#[test]
fn shapes_are_pure_functions_of_seed() {
    let r = ShapeRegime::default();
    for class in ShapeClass::ALL {
        let a = gen_shape(class, 42, 64, &r).unwrap();
        assert_eq!(a, gen_shape(class, 42, 64, &r).unwrap());
        assert_ne!(a, gen_shape(class, 43, 64, &r).unwrap());
        assert_eq!(a.len(), 64);
        assert!((a.max_norm() - 1.0).abs() < 1e-6);
        assert!(a.centroid().iter().all(|v| v.abs() < 1e-6));
    }
    assert!(gen_shape(ShapeClass::Cube, 1, 7, &r).is_err());
}

#[test]
fn dataset_is_deterministic_and_split_disjoint() {
    let a = gen_dataset(&small_spec(3)).unwrap();
    assert_eq!(a, gen_dataset(&small_spec(3)).unwrap());
    assert_eq!((a.train.len(), a.val.len(), a.test.len()), (48, 24, 24));
    let shifted = gen_dataset(&DatasetSpec {
        distribution_shift: true,
        ..small_spec(3)
    })
    .unwrap();
    let mut seen = HashSet::new();
    for ds in [&a, &shifted] {
        for split in Split::ALL {
            for s in ds.split(split) {
                assert!(seen.insert(cloud_hash(&s.cloud)), "duplicate cloud");
            }
        }
    }
}

#[test]
fn shifted_distribution_changes_spacing_and_frequencies() {
    let base = small_spec(5);
    let shift = DatasetSpec {
        distribution_shift: true,
        ..base.clone()
    };
    assert_ne!(base.hash(), shift.hash());
    let a = gen_dataset(&base).unwrap().mean_nn_spacing();
    let b = gen_dataset(&shift).unwrap().mean_nn_spacing();
    assert!((a - b).abs() / a >= 0.10, "base {a} shift {b}");
    let counts: HashSet<usize> = (0..8).map(|c| shift.class_count(Split::Train, c)).collect();
    assert!(counts.len() > 1);
}

#[test]
fn seed_derivation_spreads() {
    let seeds: HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
    assert_eq!(seeds.len(), 1000);
    assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
}

#[test]
fn retrieval_episode_construction() {
    let ds = gen_dataset(&small_spec(1)).unwrap();
    for seed in 0..20 {
        let ep = gen_retrieval_episode(&ds.train, 4, seed).unwrap();
        assert_eq!(ep, gen_retrieval_episode(&ds.train, 4, seed).unwrap());
        assert_eq!(ep.candidates.len(), 4);
        let (euler, t) = ep.transforms[ep.answer];
        let moved = apply_rigid(&ep.query, euler, t).unwrap();
        // the answer is the moved query plus jitter only
        for (p, q) in moved.points().iter().zip(ep.candidates[ep.answer].points()) {
            for d in 0..3 {
                assert!((p[d] - q[d]).abs() < 6.0 * episodes_jitter());
            }
        }
        let hard = ep
            .candidates
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != ep.answer)
            .count();
        assert_eq!(hard, 3);
    }
    assert!(gen_retrieval_episode(&ds.train, 1, 0).is_err());
    assert!(gen_retrieval_episode(&ds.train[..3], 4, 0).is_err());
}

fn episodes_jitter() -> f64 {
    episodes::RETRIEVAL_JITTER
}

#[test]
fn retrieval_answer_position_is_uniform() {
    let ds = gen_dataset(&small_spec(2)).unwrap();
    let first = (0..1000)
        .filter(|&s| gen_retrieval_episode(&ds.train, 2, s).unwrap().answer == 0)
        .count();
    assert!((450..=550).contains(&first), "{first}");
}

#[test]
fn retrieval_episode_includes_hard_negative() {
    let ds = gen_dataset(&small_spec(4)).unwrap();
    for seed in 0..20 {
        let ep = gen_retrieval_episode(&ds.train, 4, seed).unwrap();
        // recover each candidate's source cloud by undoing its transform
        let label_of = |c: &PointCloud<f64>| {
            ds.train
                .iter()
                .map(|s| (s.cloud.chamfer(c), s.label))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1
        };
        let qlabel = label_of(&ep.query);
        let same = ep
            .candidates
            .iter()
            .zip(&ep.transforms)
            .filter(|(c, (e, t))| {
                let r = rotation_matrix(*e);
                let back: Vec<[f64; 3]> = c
                    .points()
                    .iter()
                    .map(|p| {
                        let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
                        [0, 1, 2].map(|j| r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2])
                    })
                    .collect();
                label_of(&PointCloud::new(back).unwrap()) == qlabel
            })
            .count();
        assert!(same >= 2, "answer plus at least one hard negative");
    }
}

#[test]
fn retrieval_pairs_are_balanced() {
    let ds = gen_dataset(&small_spec(6)).unwrap();
    let pos = (0..400)
        .filter(|&s| gen_retrieval_pair(&ds.train, s).unwrap().is_match)
        .count();
    assert!((160..=240).contains(&pos));
}

/// Rigid motion from three non-collinear correspondences via orthonormal
/// frames built on both sides.
fn frame_oracle(src: &[[f64; 3]; 3], dst: &[[f64; 3]; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
    fn frame(p: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let unit = |a: [f64; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            a.map(|v| v / n)
        };
        let e1 = unit(sub(p[1], p[0]));
        let e3 = unit(cross(e1, sub(p[2], p[0])));
        let e2 = cross(e3, e1);
        // columns e1 e2 e3
        [0, 1, 2].map(|i| [e1[i], e2[i], e3[i]])
    }
    let fs = frame(src);
    let fd = frame(dst);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| fd[i][k] * fs[j][k]).sum();
        }
    }
    let t = [0, 1, 2].map(|i| dst[0][i] - (0..3).map(|k| r[i][k] * src[0][k]).sum::<f64>());
    (r, t)
}

#[test]
fn registration_pair_transform_is_recoverable() {
    let ds = gen_dataset(&small_spec(8)).unwrap();
    for seed in 0..30 {
        let pair = gen_registration_pair(&ds.train, seed).unwrap();
        assert_eq!(pair, gen_registration_pair(&ds.train, seed).unwrap());
        assert!(pair.euler_deg.iter().all(|a| a.abs() <= 45.0));
        assert!(pair.translation.iter().all(|a| a.abs() <= 1.0));
        let s = pair.source.points();
        let d = pair.template.points();
        let (r, t) = frame_oracle(&[s[0], s[1], s[2]], &[d[0], d[1], d[2]]);
        let truth = rotation_matrix(pair.euler_deg);
        for i in 0..3 {
            assert!((t[i] - pair.translation[i]).abs() < 1e-9);
            for j in 0..3 {
                assert!((r[i][j] - truth[i][j]).abs() < 1e-9);
            }
        }
    }
    let c = &ds.train[0].cloud;
    assert_eq!(&apply_rigid(c, [0.0; 3], [0.0; 3]).unwrap(), c);
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = gen_dataset(&small_spec(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let index = write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(index.entries.len(), ds.len());
    assert_eq!(index.spec_hash, ds.spec.hash());
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}
