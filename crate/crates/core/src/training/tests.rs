use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{gen_dataset, Dataset, DatasetSpec};
use crate::geometry::SampleSpec;
use crate::losses::{loss_sampler_task_single, sampler_pass, ClassificationLoss, LossWeights};
use crate::models::{ParamSet, SamplerModel, TaskKind, TaskModel};
use crate::tensor::Tensor;
use crate::Error;

fn scalar_params(values: &[f64]) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("x", vec![values.len()], values.to_vec());
    p
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = scalar_params(&[0.3, -2.0]);
    let mut opt = Adam::new(1e-3);
    opt.update(&mut p, &[vec![0.0, 0.0]]).unwrap();
    assert_eq!(p.get(0).data, vec![0.3, -2.0]);
    assert_eq!(opt.step, 1);
}

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    let mut p = scalar_params(&[1.0, 1.0, 1.0]);
    let mut opt = Adam::new(1e-3);
    opt.update(&mut p, &[vec![5.0, -0.02, 300.0]]).unwrap();
    let moved: Vec<f64> = p.get(0).data.iter().map(|v| v - 1.0).collect();
    for (d, s) in moved.iter().zip([-1.0, 1.0, -1.0]) {
        assert!((d - s * 1e-3).abs() < 1e-8, "{d}");
    }
    assert!(opt.update(&mut p, &[vec![1.0]]).is_err());
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut p = scalar_params(&[1.0, 1.0]);
    let mut opt = Adam::new(0.05);
    for _ in 0..200 {
        let g: Vec<f64> = p.get(0).data.iter().map(|x| 2.0 * x).collect();
        opt.update(&mut p, &[g]).unwrap();
    }
    let norm = p.get(0).data.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "{norm}");
}

#[test]
fn sgd_steps_against_the_gradient() {
    let mut p = scalar_params(&[1.0]);
    sgd_update(&mut p, &[vec![4.0]], 0.25).unwrap();
    assert_eq!(p.get(0).data, vec![0.0]);
}

fn quadratic(c: f64) -> impl Fn(&[Tensor<f64>]) -> crate::Result<Tensor<f64>> {
    move |p| Ok(p[0].add_scalar(-c).square().sum())
}

fn theta_leaf(v: f64) -> Vec<Tensor<f64>> {
    vec![Tensor::param(vec![v], vec![1]).unwrap()]
}

#[test]
fn inner_update_matches_closed_form() {
    let (theta, c, alpha) = (0.7, -0.4, 0.05);
    let same = inner_adapt(&theta_leaf(theta), quadratic(c), 0.0, 5, true).unwrap();
    assert_eq!(same[0].item(), theta);
    let one = inner_adapt(&theta_leaf(theta), quadratic(c), alpha, 1, true).unwrap();
    assert!((one[0].item() - (theta - 2.0 * alpha * (theta - c))).abs() <= 1e-12);
    let five = inner_adapt(&theta_leaf(theta), quadratic(c), alpha, 5, false).unwrap();
    let mut x = theta;
    for _ in 0..5 {
        x -= 2.0 * alpha * (x - c);
    }
    assert!((five[0].item() - x).abs() <= 1e-12);
}

fn meta_cfg(alpha: f64, steps: usize, second_order: bool) -> MetaConfig {
    MetaConfig { alpha, inner_steps: steps, second_order, ..MetaConfig::default() }
}

/// Outer objective `Σ_c (θ'_c - c)²`, first-order tape only.
fn outer_objective(theta: f64, cs: &[f64], alpha: f64, steps: usize) -> f64 {
    cs.iter()
        .map(|&c| {
            let fast = inner_adapt(&theta_leaf(theta), quadratic(c), alpha, steps, false).unwrap();
            (fast[0].item() - c).powi(2)
        })
        .sum()
}

fn meta_grad(theta: f64, cs: &[f64], cfg: &MetaConfig) -> (f64, MetaStepState) {
    let keys: Vec<TaskModelKey> = (0..cs.len()).map(|i| (i, 0)).collect();
    let state = meta_step(&scalar_params(&[theta]), &keys, |(i, _), p| quadratic(cs[i])(p), cfg).unwrap();
    (state.meta_gradient[0][0], state)
}

#[test]
fn second_order_meta_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let theta = rng.random_range(-3.0..3.0);
        let c = rng.random_range(-3.0..3.0);
        let alpha = rng.random_range(0.0..0.2);
        let (g, _) = meta_grad(theta, &[c], &meta_cfg(alpha, 1, true));
        let expected = 2.0 * (1.0 - 2.0 * alpha).powi(2) * (theta - c);
        assert!((g - expected).abs() <= 1e-8, "{g} vs {expected}");
    }
}

#[test]
fn meta_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for steps in [1, 3, 5] {
        for _ in 0..10 {
            let theta = rng.random_range(-2.0..2.0);
            let cs = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let alpha = rng.random_range(0.01..0.2);
            let (g, _) = meta_grad(theta, &cs, &meta_cfg(alpha, steps, true));
            let h = 1e-5;
            let fd = (outer_objective(theta + h, &cs, alpha, steps) - outer_objective(theta - h, &cs, alpha, steps)) / (2.0 * h);
            assert!((g - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "steps {steps}: {g} vs {fd}");
        }
    }
}

#[test]
fn first_order_meta_gradient_is_evaluated_at_adapted_point() {
    let (theta, c, alpha) = (1.5, 0.5, 0.1);
    let (g, state) = meta_grad(theta, &[c], &meta_cfg(alpha, 1, false));
    let adapted = theta - 2.0 * alpha * (theta - c);
    assert!((g - 2.0 * (adapted - c)).abs() <= 1e-12);
    assert_eq!(state.adapted[&(0, 0)].get(0).data, vec![adapted]);
    // theta itself is untouched until the outer update commits
    assert_eq!(state.theta.get(0).data, vec![theta]);
}

#[test]
fn symmetric_tasks_cancel() {
    let (g, state) = meta_grad(0.0, &[1.0, -1.0], &meta_cfg(1e-3, 1, true));
    assert!(g.abs() <= 1e-12);
    let keys = [(0, 0), (1, 0)];
    let next = meta_outer_update(&state, &keys, 1e-3).unwrap();
    assert!(next.get(0).data[0].abs() <= 1e-12);
}

#[test]
fn outer_update_edge_cases() {
    let (_, state) = meta_grad(0.8, &[0.1], &meta_cfg(1e-2, 2, true));
    let same = meta_outer_update(&state, &[(0, 0)], 0.0).unwrap();
    assert_eq!(same, state.theta);
    let moved = meta_outer_update(&state, &[(0, 0)], 0.1).unwrap();
    assert!(moved.get(0).data[0] < 0.8);
    assert!(matches!(meta_outer_update(&state, &[(0, 0), (1, 0)], 0.1), Err(Error::Contract(_))));
}

// --- engines on a tiny dataset ---

fn tiny_dataset() -> Dataset {
    gen_dataset(&DatasetSpec {
        m: 32,
        train_per_class: 3,
        val_per_class: 2,
        test_per_class: 2,
        seed: 5,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn frozen(kind: TaskKind, seeds: std::ops::Range<u64>) -> Vec<TaskModel> {
    seeds.map(|s| TaskModel::init(kind, s, 32).freeze()).collect()
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { batch_size: 8, epochs, seed: 3, ..TrainConfig::default() }
}

fn sampler(seed: u64) -> SamplerModel {
    SamplerModel::new(SampleSpec::new(32, 8).unwrap(), 4, seed).unwrap()
}

#[test]
fn training_is_deterministic() {
    let ds = tiny_dataset();
    let set = EvalSet::build(TaskKind::Classification, &ds.val, 0, 4, 1).unwrap();
    let data = TaskData { kind: TaskKind::Classification, train: &ds.train, eval: &set };
    let models = frozen(TaskKind::Classification, 0..3);
    let run = || train_single(sampler(1), &models[0], &models[1..], &data, &tiny_cfg(2)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.sampler, b.sampler);
    let strip = |log: &[EpochRecord]| log.iter().map(EpochRecord::untimed).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&b.log));
    assert!(a.log[0].eval.contains_key("test/mean") && a.log[0].eval.contains_key("train/mean"));
    assert!(a.sampler.trained_on.contains(&models[0].uid));
}

#[test]
fn joint_with_one_model_is_single() {
    let ds = tiny_dataset();
    let set = EvalSet::build(TaskKind::Reconstruction, &ds.val, 0, 4, 1).unwrap();
    let data = TaskData { kind: TaskKind::Reconstruction, train: &ds.train, eval: &set };
    let models = frozen(TaskKind::Reconstruction, 0..2);
    let single = train_single(sampler(2), &models[0], &models[1..], &data, &tiny_cfg(2)).unwrap();
    let joint = train_joint(sampler(2), &[&models[0]], &models[1..], &data, &tiny_cfg(2)).unwrap();
    assert_eq!(single.sampler, joint.sampler);
    for (s, j) in single.log.iter().zip(&joint.log) {
        let mut j = j.untimed();
        j.engine = s.engine.clone();
        assert_eq!(s.untimed(), j);
    }
}

#[test]
fn engines_leave_task_models_untouched() {
    let ds = tiny_dataset();
    let set = EvalSet::build(TaskKind::Retrieval, &ds.val, 4, 2, 1).unwrap();
    let data = TaskData { kind: TaskKind::Retrieval, train: &ds.train, eval: &set };
    let models = frozen(TaskKind::Retrieval, 0..3);
    let before = models.clone();
    let pool: Vec<&TaskModel> = models[..2].iter().collect();
    let out = train_joint(sampler(3), &pool, &models[2..], &data, &tiny_cfg(1)).unwrap();
    let tasks = [MetaTask { kind: TaskKind::Retrieval, pool: &models[..2], train: &ds.train }];
    let cfg = MetaConfig { iterations: 2, batch_size: 4, inner_steps: 1, ..MetaConfig::default() };
    meta_train(out.sampler, &tasks, &cfg).unwrap();
    for (a, b) in models.iter().zip(&before) {
        assert_eq!(a.params.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn unfrozen_or_mismatched_pools_are_rejected() {
    let ds = tiny_dataset();
    let set = EvalSet::build(TaskKind::Classification, &ds.val, 0, 4, 1).unwrap();
    let data = TaskData { kind: TaskKind::Classification, train: &ds.train, eval: &set };
    let live = TaskModel::init(TaskKind::Classification, 0, 32);
    assert!(matches!(train_single(sampler(0), &live, &[], &data, &tiny_cfg(1)), Err(Error::Contract(_))));
    let other = TaskModel::init(TaskKind::Reconstruction, 0, 32).freeze();
    assert!(train_single(sampler(0), &other, &[], &data, &tiny_cfg(1)).is_err());
}

#[test]
fn adaptation_refuses_meta_training_models() {
    let ds = tiny_dataset();
    let set = EvalSet::build(TaskKind::Classification, &ds.val, 0, 4, 1).unwrap();
    let data = TaskData { kind: TaskKind::Classification, train: &ds.train, eval: &set };
    let models = frozen(TaskKind::Classification, 0..4);
    let tasks = [MetaTask { kind: TaskKind::Classification, pool: &models[..2], train: &ds.train }];
    let cfg = MetaConfig { iterations: 1, batch_size: 4, inner_steps: 1, ..MetaConfig::default() };
    let meta = meta_train(sampler(4), &tasks, &cfg).unwrap().sampler;
    let err = adapt(meta.clone(), &[&models[1]], &models[3..], &data, &tiny_cfg(1)).unwrap_err();
    assert!(matches!(err, Error::PoolOverlap(_)));
    // evaluating on a meta-training model is refused too
    assert!(matches!(evaluate(&meta, &models[..1], &set, EvalMode::Matched), Err(Error::PoolOverlap(_))));
    let zero = adapt(meta.clone(), &[&models[2]], &models[3..], &data, &tiny_cfg(0)).unwrap();
    assert_eq!(zero.sampler.params, meta.params);
    assert!(zero.log.is_empty());
}

#[test]
fn nan_parameters_abort_with_diagnostics() {
    let ds = tiny_dataset();
    let set = EvalSet::build(TaskKind::Classification, &ds.val, 0, 4, 1).unwrap();
    let data = TaskData { kind: TaskKind::Classification, train: &ds.train, eval: &set };
    let models = frozen(TaskKind::Classification, 0..1);
    let mut s = sampler(5);
    s.set_temperature(f64::NAN);
    match train_single(s, &models[0], &[], &data, &tiny_cfg(1)) {
        Err(Error::NumericalAbort(msg)) => assert!(msg.contains("epoch 1") && msg.contains("projection")),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn full_resolution_methods_match_the_plain_model() {
    let ds = tiny_dataset();
    let models = frozen(TaskKind::Classification, 0..2);
    let set = EvalSet::build(TaskKind::Classification, &ds.test, 0, 4, 1).unwrap();
    let plain = evaluate_method(&models, &set, &SamplingMethod::Identity).unwrap();
    // FPS with n = m permutes the points; the encoder is order-invariant
    let fps = evaluate_method(&models, &set, &SamplingMethod::Fps { n: 32 }).unwrap();
    assert!((plain.mean - fps.mean).abs() <= 1e-9);
    let rec = frozen(TaskKind::Reconstruction, 0..1);
    let rset = EvalSet::build(TaskKind::Reconstruction, &ds.test, 0, 4, 1).unwrap();
    let a = evaluate_method(&rec, &rset, &SamplingMethod::Identity).unwrap().mean;
    let b = evaluate_method(&rec, &rset, &SamplingMethod::Fps { n: 32 }).unwrap().mean;
    assert!((a - b).abs() <= 1e-9);
    let direct = {
        let batch = stack_clouds(&ds.test.iter().map(|s| &s.cloud).collect::<Vec<_>>()).unwrap();
        let out = crate::models::task_forward(&rec[0], &rec[0].bind(), &[batch.clone()]).unwrap();
        crate::geometry::chamfer_distance(out.tensor(), &batch).unwrap().item()
    };
    assert!((a - direct).abs() <= 1e-9, "{a} vs {direct}");
}

#[test]
fn meta_without_inner_steps_is_the_joint_gradient() {
    let ds = tiny_dataset();
    let models = frozen(TaskKind::Classification, 0..1);
    let s = sampler(6);
    let stream = BatchStream::new(TaskKind::Classification, &ds.train, 1, 8);
    let batch = &stream.epoch(1).unwrap()[0];
    let cls = ClassificationLoss::CrossEntropy;
    let cfg = MetaConfig { inner_steps: 0, ..MetaConfig::default() };
    let state = meta_step(
        &s.params,
        &[(0, 0)],
        |_, theta| loss_sampler_task_single(&sampler_pass(&s, theta, batch)?, &models[0], batch, cls),
        &cfg,
    )
    .unwrap();
    let task_only = LossWeights { w_simp: 0.0, w_proj: 0.0, ..LossWeights::default() };
    let direct = sampler_gradient(&s, &[&models[0]], batch, &task_only, cls).unwrap();
    assert_eq!(state.meta_gradient, direct);
}

#[test]
fn meta_training_is_deterministic_and_cools() {
    let ds = tiny_dataset();
    let cls = frozen(TaskKind::Classification, 0..2);
    let rec = frozen(TaskKind::Reconstruction, 0..1);
    let tasks = [
        MetaTask { kind: TaskKind::Classification, pool: &cls, train: &ds.train },
        MetaTask { kind: TaskKind::Reconstruction, pool: &rec, train: &ds.train },
    ];
    let cfg = MetaConfig { iterations: 6, batch_size: 4, inner_steps: 2, log_every: 3, ..MetaConfig::default() };
    let a = meta_train(sampler(7), &tasks, &cfg).unwrap();
    let b = meta_train(sampler(7), &tasks, &cfg).unwrap();
    assert_eq!(a.sampler, b.sampler);
    let strip = |log: &[EpochRecord]| log.iter().map(EpochRecord::untimed).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&b.log));
    assert_eq!(a.log.len(), 2);
    assert!(a.log[1].temperature < a.log[0].temperature && a.log[0].temperature < 1.0);
    assert!(a.log[0].task_losses.contains_key("classification") && a.log[0].task_losses.contains_key("reconstruction"));
    assert_eq!(a.sampler.trained_on.len(), 3);
}

#[test]
fn logs_round_trip_through_jsonl() {
    let mut rec = EpochRecord::new("joint", TaskKind::Retrieval, 4, 2);
    rec.eval.insert("test/mean".into(), 0.75);
    rec.wall_ms = 12;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_jsonl(&text).unwrap(), vec![rec.clone(), rec]);
}

#[test]
fn batch_stream_covers_each_sample_once_per_epoch() {
    let ds = tiny_dataset();
    let stream = BatchStream::new(TaskKind::Classification, &ds.train, 2, 5);
    let batches = stream.epoch(1).unwrap();
    assert_eq!(batches.len(), stream.batches_per_epoch());
    // the ragged tail is dropped
    assert_eq!(batches.len(), ds.train.len() / 5);
    let mut seen: Vec<Vec<u64>> = batches
        .iter()
        .flat_map(|b| b.inputs[0].data().chunks(32 * 3).map(|c| c.iter().map(|v| v.to_bits()).collect()))
        .collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), batches.len() * 5);
    assert_ne!(
        stream.epoch(1).unwrap()[0].inputs[0].data(),
        stream.epoch(2).unwrap()[0].inputs[0].data()
    );
    let pairs = BatchStream::new(TaskKind::PoseRegression, &ds.train, 2, 5).epoch(1).unwrap();
    assert_eq!(pairs[0].inputs.len(), 2);
}
