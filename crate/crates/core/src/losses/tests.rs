use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{chamfer_distance, SampleSpec};
use crate::models::{SamplerModel, TaskKind, TaskModel};
use crate::tensor::{grad, grad_check, Tensor};
use crate::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn cross_entropy_values() {
    let uniform = Tensor::<f64>::zeros(&[3, 8]);
    let l = loss_classification(&uniform, &[0, 4, 7]).unwrap().item();
    assert!(close(l, 8f64.ln(), 1e-12));
    let mut confident = vec![0.0; 8];
    confident[2] = 60.0;
    let l = loss_classification(&Tensor::new(confident, vec![1, 8]).unwrap(), &[2]).unwrap().item();
    assert!(l >= 0.0 && l < 1e-24);
    assert!(matches!(loss_classification(&uniform, &[0, 8, 1]), Err(Error::Contract(_))));
    assert!(loss_classification(&uniform, &[0, 1]).is_err());
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let logits = rand_tensor(&mut rng, &[4, 8], -2.0, 2.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..8)).collect();
        // loss values near 2 make roundoff dominate below this step
        let err = grad_check(|x: &Tensor<f64>| loss_classification(x, &labels), &logits, 1e-4).unwrap();
        assert!(err <= 1e-8, "{err}");
    }
}

#[test]
fn one_hot_bce_values_and_gradient() {
    let uniform = Tensor::<f64>::zeros(&[2, 8]);
    // every sigmoid is 0.5, so each of the 8 terms is ln 2
    let l = loss_classification_bce(&uniform, &[1, 3]).unwrap().item();
    assert!(close(l, 8.0 * 2f64.ln(), 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = rand_tensor(&mut rng, &[3, 8], -2.0, 2.0);
    let err = grad_check(|x: &Tensor<f64>| loss_classification_bce(x, &[0, 5, 7]), &logits, 1e-6).unwrap();
    assert!(err <= 1e-8, "{err}");
    assert!(loss_classification_bce(&uniform, &[9, 0]).is_err());
}

#[test]
fn reconstruction_is_chamfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[2, 10, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 7, 3], -1.0, 1.0);
    let l = loss_reconstruction(&a, &b).unwrap().item();
    assert_eq!(l.to_bits(), chamfer_distance(&a, &b).unwrap().item().to_bits());
    assert_eq!(loss_reconstruction(&a, &a).unwrap().item(), 0.0);
    let p = Tensor::new(vec![0.0, 0.0, 0.0], vec![1, 1, 3]).unwrap();
    let q = Tensor::new(vec![1.0, 0.0, 0.0], vec![1, 1, 3]).unwrap();
    assert_eq!(loss_reconstruction(&p, &q).unwrap().item(), 2.0);
    // empty clouds cannot be built in the first place
    assert!(Tensor::<f64>::new(vec![], vec![1, 0, 3]).is_err());
}

#[test]
fn retrieval_values() {
    let half = Tensor::new(vec![0.5, 0.5], vec![2]).unwrap();
    assert!(close(loss_retrieval(&half, &[true, false]).unwrap().item(), 2f64.ln(), 1e-15));
    let s = Tensor::new(vec![0.9], vec![1]).unwrap();
    let l = loss_retrieval(&s, &[true]).unwrap().item();
    assert!(close(l, -(0.9f64).ln(), 1e-15));
    assert!(close(l, 0.10536, 1e-5));
    // saturated scores are clamped rather than producing infinities
    let sat = Tensor::new(vec![0.0f64, 1.0], vec![2]).unwrap();
    let l = loss_retrieval(&sat, &[true, false]).unwrap().item();
    assert!(l.is_finite() && close(l, -(1e-12f64).ln(), 1e-3));
}

#[test]
fn retrieval_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let s = rand_tensor(&mut rng, &[5], 0.05, 0.95);
        let y: Vec<bool> = (0..5).map(|_| rng.random_bool(0.5)).collect();
        let err = grad_check(|x: &Tensor<f64>| loss_retrieval(x, &y), &s, 1e-6).unwrap();
        assert!(err <= 1e-8, "{err}");
    }
}

#[test]
fn pose_loss_vanishes_at_ground_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let src = rand_tensor(&mut rng, &[2, 16, 3], -1.0, 1.0);
    let euler = rand_tensor(&mut rng, &[2, 3], -45.0, 45.0);
    let t = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let template = crate::geometry::rigid_transform(&src, &euler, &t).unwrap();
    assert!(loss_pose(&euler, &t, &src, &template).unwrap().item() < 1e-28);
    let zero = Tensor::<f64>::zeros(&[2, 3]);
    assert_eq!(loss_pose(&zero, &zero, &src, &src).unwrap().item(), 0.0);
}

#[test]
fn pose_gradient_wrt_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let src = rand_tensor(&mut rng, &[2, 12, 3], -1.0, 1.0);
    let template = rand_tensor(&mut rng, &[2, 12, 3], -1.0, 1.0);
    let t = rand_tensor(&mut rng, &[2, 3], -0.5, 0.5);
    for _ in 0..10 {
        let euler = rand_tensor(&mut rng, &[2, 3], -45.0, 45.0);
        let err = grad_check(|e: &Tensor<f64>| loss_pose(e, &t, &src, &template), &euler, 1e-6).unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}

#[test]
fn simplification_values() {
    let p = Tensor::new(vec![0., 0., 0., 1., 0., 0., 2., 0., 0., 3., 0., 0.], vec![1, 4, 3]).unwrap();
    let q = Tensor::new(vec![0.0, 0.0, 0.0], vec![1, 1, 3]).unwrap();
    assert_eq!(loss_simplification(&q, &p, 1.0, 1.0).unwrap().item(), 3.5);
    // subset: forward terms vanish, coverage stays
    assert_eq!(loss_simplification(&q, &p, 1.0, 0.0).unwrap().item(), 0.0);
    assert_eq!(loss_simplification(&p, &p, 1.0, 1.0).unwrap().item(), 0.0);
}

#[test]
fn simplification_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = rand_tensor(&mut rng, &[2, 20, 3], -1.0, 1.0);
    for _ in 0..10 {
        let q = rand_tensor(&mut rng, &[2, 5, 3], -1.0, 1.0);
        let err = grad_check(|x: &Tensor<f64>| loss_simplification(x, &p, 1.0, 1.0), &q, 1e-6).unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}

#[test]
fn projection_values_and_descent() {
    assert!(close(loss_projection(&Tensor::scalar(0.0f64)).item(), 1.0, 1e-15));
    assert!(close(loss_projection(&Tensor::scalar(0.1f64.ln())).item(), 0.01, 1e-15));
    let mut log_t = 0.0f64;
    for _ in 0..50 {
        let x = Tensor::param(vec![log_t], vec![]).unwrap();
        let g = grad(&loss_projection(&x), &[x], false).unwrap()[0].item();
        assert!(g > 0.0);
        let next = log_t - 0.1 * g;
        assert!(next.exp() < log_t.exp());
        log_t = next;
    }
}

#[test]
fn total_is_weighted_sum() {
    let (a, b, c) = (Tensor::scalar(2.0f64), Tensor::scalar(3.0), Tensor::scalar(4.0));
    assert_eq!(loss_total(&a, &b, &c, &LossWeights::default()).unwrap().item(), 9.0);
    let zero = LossWeights { w_task: 0.0, w_simp: 0.0, w_proj: 0.0, ..LossWeights::default() };
    assert_eq!(loss_total(&a, &b, &c, &zero).unwrap().item(), 0.0);
    let neg = LossWeights { w_simp: -1.0, ..LossWeights::default() };
    assert!(matches!(loss_total(&a, &b, &c, &neg), Err(Error::Contract(_))));

    let x = Tensor::param(vec![0.3, -0.7], vec![2]).unwrap();
    let w = LossWeights { w_task: 0.5, w_simp: 2.0, w_proj: 3.0, ..LossWeights::default() };
    let (t, s, p) = (x.square().sum(), x.sin().sum(), x.exp().sum());
    let g = grad(&loss_total(&t, &s, &p, &w).unwrap(), &[x.clone()], false).unwrap().remove(0);
    let gs: Vec<Vec<f64>> = [t, s, p].iter().map(|l| grad(l, &[x.clone()], false).unwrap()[0].to_vec()).collect();
    for i in 0..2 {
        let expected = 0.5 * gs[0][i] + 2.0 * gs[1][i] + 3.0 * gs[2][i];
        assert!(close(g.data()[i], expected, 1e-14));
    }
}

fn classification_batch(rng: &mut ChaCha8Rng) -> TaskBatch<f64> {
    TaskBatch {
        kind: TaskKind::Classification,
        inputs: vec![rand_tensor(rng, &[3, 32, 3], -1.0, 1.0)],
        target: Target::Labels(vec![0, 3, 6]),
    }
}

#[test]
fn joint_of_identical_models_scales_single() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sampler = SamplerModel::new(SampleSpec::new(32, 8).unwrap(), 4, 1).unwrap();
    let theta = sampler.params.bind::<f64>(true);
    let batch = classification_batch(&mut rng);
    let model = TaskModel::init(TaskKind::Classification, 3, 32).freeze();
    let pass = sampler_pass(&sampler, &theta, &batch).unwrap();
    let single = loss_sampler_task_single(&pass, &model, &batch, ClassificationLoss::CrossEntropy).unwrap();
    for k in [1usize, 2, 3] {
        let pool = vec![&model; k];
        let joint = loss_sampler_task_joint(&pass, &pool, &batch, ClassificationLoss::CrossEntropy).unwrap();
        assert_eq!(joint.item().to_bits(), (single.item() * k as f64).to_bits());
    }
    assert!(single.item() >= 0.0);
}

#[test]
fn joint_gradient_is_sum_of_singles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sampler = SamplerModel::new(SampleSpec::new(32, 8).unwrap(), 4, 2).unwrap();
    let batch = classification_batch(&mut rng);
    let models: Vec<TaskModel> = (0..3).map(|s| TaskModel::init(TaskKind::Classification, s, 32).freeze()).collect();
    let refs: Vec<&TaskModel> = models.iter().collect();
    let grads_for = |pool: &[&TaskModel]| -> Vec<Vec<f64>> {
        let theta = sampler.params.bind::<f64>(true);
        let pass = sampler_pass(&sampler, &theta, &batch).unwrap();
        let l = loss_sampler_task_joint(&pass, pool, &batch, ClassificationLoss::CrossEntropy).unwrap();
        grad(&l, &theta, false).unwrap().iter().map(|g| g.to_vec()).collect()
    };
    let joint = grads_for(&refs);
    let singles: Vec<Vec<Vec<f64>>> = refs.iter().map(|m| grads_for(&[m])).collect();
    let mut nonzero = 0;
    let mut total = 0;
    for (pi, g) in joint.iter().enumerate() {
        for (i, &v) in g.iter().enumerate() {
            let sum: f64 = singles.iter().map(|s| s[pi][i]).sum();
            // association order differs between the two paths
            let scale: f64 = singles.iter().map(|s| s[pi][i].abs()).sum();
            assert!((v - sum).abs() <= 1e-12 * scale.max(1e-300), "{v} vs {sum}");
            total += 1;
            nonzero += usize::from(v != 0.0);
        }
    }
    assert!(nonzero > 0 && total > 0);
}

#[test]
fn joint_rejects_bad_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sampler = SamplerModel::new(SampleSpec::new(32, 8).unwrap(), 4, 3).unwrap();
    let theta = sampler.params.bind::<f64>(true);
    let batch = classification_batch(&mut rng);
    let pass = sampler_pass(&sampler, &theta, &batch).unwrap();
    let live = TaskModel::init(TaskKind::Classification, 1, 32);
    let cls = ClassificationLoss::CrossEntropy;
    assert!(matches!(loss_sampler_task_single(&pass, &live, &batch, cls), Err(Error::Contract(_))));
    let a = live.clone().freeze();
    let b = TaskModel::init(TaskKind::Reconstruction, 1, 32).freeze();
    assert!(matches!(loss_sampler_task_joint(&pass, &[&a, &b], &batch, cls), Err(Error::Contract(_))));
    assert!(loss_sampler_task_joint(&pass, &[], &batch, cls).is_err());
}

#[test]
fn sampler_losses_reach_the_sampler() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sampler = SamplerModel::new(SampleSpec::new(32, 8).unwrap(), 4, 4).unwrap();
    let theta = sampler.params.bind::<f64>(true);
    let batch = classification_batch(&mut rng);
    let pass = sampler_pass(&sampler, &theta, &batch).unwrap();
    let model = TaskModel::init(TaskKind::Classification, 5, 32).freeze();
    let task = loss_sampler_task_single(&pass, &model, &batch, ClassificationLoss::CrossEntropy).unwrap();
    let simp = loss_simplification(&pass.sample.generated, &pass.stacked, 1.0, 1.0).unwrap();
    let proj = loss_projection(&pass.log_temp);
    let total = loss_total(&task, &simp, &proj, &LossWeights::default()).unwrap();
    let g = grad(&total, &theta, false).unwrap();
    assert!(g.iter().all(|t| t.data().iter().all(|v| v.is_finite())));
    assert!(g.iter().any(|t| t.data().iter().any(|&v| v != 0.0)));
}
