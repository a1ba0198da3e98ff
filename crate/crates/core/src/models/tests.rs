use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use super::nets::ENCODER_PARAMS;
use crate::geometry::{PointCloud, SampleSpec};
use crate::tensor::{grad_check, no_grad, Tensor};
use crate::Error;

fn random_batch(rng: &mut ChaCha8Rng, b: usize, m: usize) -> Tensor<f64> {
    let data = (0..b * m * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(data, vec![b, m, 3]).unwrap()
}

fn random_cloud(rng: &mut ChaCha8Rng, m: usize) -> PointCloud<f64> {
    PointCloud::new((0..m).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect()).unwrap()
}

#[test]
fn encoder_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = TaskModel::init(TaskKind::Classification, 3, 64);
    let p = model.params.bind::<f64>(false);
    for m in [1, 5, 64] {
        let cloud = random_cloud(&mut rng, m);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.rotate_left(m / 3);
        let shuffled = cloud.select(&perm).unwrap();
        let e1 = encode_batch(&p[..4], &cloud.to_tensor().reshape(&[1, m, 3]).unwrap()).unwrap();
        let e2 = encode_batch(&p[..4], &shuffled.to_tensor().reshape(&[1, m, 3]).unwrap()).unwrap();
        assert_eq!(e1.shape(), &[1, FEATURE_DIM]);
        assert_eq!(e1.data(), e2.data());
    }
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = TaskModel::init(TaskKind::Classification, 4, 64);
    // zero biases put dead units exactly on the relu kink; move to a generic point
    for i in 0..ENCODER_PARAMS {
        for v in model.params.get_mut(i).data.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let p = model.params.bind::<f64>(false);
    let x = random_batch(&mut rng, 2, 9);
    let weights = Tensor::new((0..2 * FEATURE_DIM).map(|_| rng.random_range(0.5..1.5)).collect(), vec![2, FEATURE_DIM]).unwrap();
    for which in 0..4 {
        let f = |w: &Tensor<f64>| -> crate::Result<Tensor<f64>> {
            let mut q = p[..4].to_vec();
            q[which] = w.clone();
            Ok(encode_batch(&q, &x)?.mul(&weights)?.sum())
        };
        // piecewise linear in the weights, so a wide step costs no truncation error
        let err = grad_check(f, &p[which], 1e-5).unwrap();
        assert!(err <= 1e-6, "param {which}: {err}");
    }
}

#[test]
fn task_output_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_batch(&mut rng, 3, 16);
    let b = random_batch(&mut rng, 3, 16);
    for kind in TaskKind::ALL {
        let model = TaskModel::init(kind, 1, 64);
        let p = model.bind::<f64>();
        let inputs = if kind.arity() == 1 { vec![a.clone()] } else { vec![a.clone(), b.clone()] };
        match task_forward(&model, &p, &inputs).unwrap() {
            TaskOutput::Logits(l) => assert_eq!(l.shape(), &[3, NUM_CLASSES]),
            TaskOutput::Cloud(c) => assert_eq!(c.shape(), &[3, 64, 3]),
            TaskOutput::Score(s) => {
                assert_eq!(s.shape(), &[3]);
                assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            TaskOutput::Pose { euler_deg, translation } => {
                assert_eq!(euler_deg.shape(), &[3, 3]);
                assert_eq!(translation.shape(), &[3, 3]);
            }
        }
        let wrong = if kind.arity() == 1 { vec![a.clone(), b.clone()] } else { vec![a.clone()] };
        assert!(matches!(task_forward(&model, &p, &wrong), Err(Error::Contract(_))));
    }
}

#[test]
fn retrieval_score_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = TaskModel::init(TaskKind::Retrieval, 9, 64);
    let p = model.bind::<f64>();
    let a = random_batch(&mut rng, 4, 12);
    let b = random_batch(&mut rng, 4, 12);
    let s1 = task_forward(&model, &p, &[a.clone(), b.clone()]).unwrap();
    let s2 = task_forward(&model, &p, &[b, a]).unwrap();
    assert_eq!(s1.tensor().data(), s2.tensor().data());
}

#[test]
fn frozen_models_bind_constants() {
    let model = TaskModel::init(TaskKind::Reconstruction, 2, 64).freeze();
    assert!(model.bind::<f64>().iter().all(|t| !t.requires_grad()));
    let live = TaskModel::init(TaskKind::Reconstruction, 2, 64);
    assert!(live.bind::<f64>().iter().all(|t| t.requires_grad()));
    assert_eq!(model.uid, model_uid(TaskKind::Reconstruction, 2));
}

fn log_temp(t: f64) -> Tensor<f64> {
    Tensor::scalar(t.ln())
}

#[test]
fn soft_projection_of_equidistant_point_is_midpoint() {
    let clouds = Tensor::new(vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 5.0, 0.0], vec![1, 3, 3]).unwrap();
    let q = Tensor::new(vec![0.0, 0.5, 0.0], vec![1, 1, 3]).unwrap();
    let s = soft_project(&q, &clouds, &log_temp(0.7), 2).unwrap();
    assert_eq!(s.weights.data(), &[0.5, 0.5]);
    assert!(s.soft.data().iter().all(|v| v.abs() < 1e-15));
    assert_eq!(s.neighbor_idx, vec![0, 1]);
}

#[test]
fn soft_projection_weights_are_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let m = rng.random_range(4..40);
        let n = rng.random_range(1..m);
        let k = rng.random_range(1..=m.min(6));
        let clouds = random_batch(&mut rng, 2, m);
        let q = random_batch(&mut rng, 2, n);
        let s = soft_project(&q, &clouds, &log_temp(rng.random_range(0.05..2.0)), k).unwrap();
        for row in s.weights.data().chunks(k) {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        // soft points stay inside the neighbours' bounding box
        for (i, p) in s.soft.data().chunks(3).enumerate() {
            let (bi, nb) = (i / n, &s.neighbor_idx[i * k..(i + 1) * k]);
            for d in 0..3 {
                let vals: Vec<f64> = nb.iter().map(|&j| clouds.data()[(bi * m + j) * 3 + d]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(p[d] >= lo - 1e-12 && p[d] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn cold_soft_projection_snaps_to_nearest_neighbour() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let clouds = random_batch(&mut rng, 1, 32);
        let q = random_batch(&mut rng, 1, 8);
        let s = soft_project(&q, &clouds, &log_temp(1e-3), 4).unwrap();
        for (i, p) in s.soft.data().chunks(3).enumerate() {
            let nn = s.neighbor_idx[i * 4];
            for d in 0..3 {
                assert!((p[d] - clouds.data()[nn * 3 + d]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn non_finite_generated_points_abort() {
    let clouds = Tensor::new(vec![0.0; 12], vec![1, 4, 3]).unwrap();
    let q = Tensor::new(vec![f64::NAN, 0.0, 0.0], vec![1, 1, 3]).unwrap();
    assert!(matches!(soft_project(&q, &clouds, &log_temp(1.0), 2), Err(crate::Error::NumericalAbort(_))));
}

#[test]
fn sampler_contracts() {
    assert!(SamplerModel::new(SampleSpec { m: 8, n: 8 }, 4, 0).is_err());
    assert!(SamplerModel::new(SampleSpec::new(8, 2).unwrap(), 9, 0).is_err());
    let mut s = SamplerModel::new(SampleSpec::new(64, 8).unwrap(), DEFAULT_K_PROJ, 0).unwrap();
    assert_eq!(s.temperature(), 1.0);
    s.set_temperature(0.25);
    assert!((s.temperature() - 0.25).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let theta = s.params.bind::<f64>(false);
    let out = sampler_forward(&s, &theta, &random_batch(&mut rng, 3, 64)).unwrap();
    assert_eq!(out.soft.shape(), &[3, 8, 3]);
    assert_eq!(out.generated.shape(), &[3, 8, 3]);
    assert_eq!(out.weights.shape(), &[3, 8, 4]);
    assert!(sampler_forward(&s, &theta, &random_batch(&mut rng, 3, 32)).is_err());
}

#[test]
fn match_keeps_distinct_neighbours_in_order() {
    let cloud = PointCloud::new((0..6).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
    let soft = [4.1, 0.0, 0.0, 0.2, 0.1, 0.0, 2.9, 0.0, 0.0];
    assert_eq!(match_indices(&soft, &cloud, 3), vec![4, 0, 3]);
    // all collapse onto index 2, the rest come from farthest point fill
    let soft = [2.0, 0.0, 0.0, 2.1, 0.0, 0.0, 1.95, 0.0, 0.0];
    assert_eq!(match_indices(&soft, &cloud, 3), vec![2, 5, 0]);
}

#[test]
fn match_always_returns_n_distinct_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..200 {
        let n = [2, 4, 8, 16, 32][trial % 5];
        let mut s = SamplerModel::new(SampleSpec::new(64, n).unwrap(), 4, trial as u64).unwrap();
        if trial % 2 == 1 {
            // stand-in for a trained sampler: perturbed weights and a cold temperature
            for i in 0..s.params.len() {
                for v in s.params.get_mut(i).data.iter_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            s.set_temperature(0.01);
        }
        let cloud = random_cloud(&mut rng, 64);
        let idx = sampler_match(&s, &cloud).unwrap();
        assert_eq!(idx.len(), n);
        let mut sorted = idx.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), n);
        assert!(idx.iter().all(|&i| i < 64));
    }
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = TaskModel::init(TaskKind::PoseRegression, 11, 64).freeze();
    let path = dir.path().join("model.ckpt");
    save_task_model(&model, &path, serde_json::json!({"epochs": 3})).unwrap();
    let (back, manifest) = load_task_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(manifest.metadata["epochs"], 3);
    assert!(load_sampler(&path).is_err());

    let mut s = SamplerModel::new(SampleSpec::new(64, 16).unwrap(), 4, 5).unwrap();
    s.trained_on.insert(model.uid.clone());
    let path = dir.path().join("sampler.ckpt");
    save_sampler(&s, &path, serde_json::Value::Null).unwrap();
    assert_eq!(load_sampler(&path).unwrap().0, s);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"TSR1");
}

#[test]
fn no_grad_forward_builds_no_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = SamplerModel::new(SampleSpec::new(64, 8).unwrap(), 4, 1).unwrap();
    let out = no_grad(|| sampler_forward(&s, &s.params.bind::<f64>(true), &random_batch(&mut rng, 1, 64)).unwrap());
    assert!(!out.soft.requires_grad());
}
