use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::engines::{grads_of, step_losses};
use super::log::{EpochRecord, LossComponents};
use super::optim::{sgd_update, Adam};
use super::BatchStream;
use crate::data::{derive_seed, Sample};
use crate::error::{contract, Error, Result};
use crate::losses::{
    loss_projection, loss_sampler_task_single, loss_simplification, sampler_pass, ClassificationLoss,
    LossWeights, TaskBatch,
};
use crate::models::{ParamSet, SamplerModel, TaskKind, TaskModel};
use crate::tensor::{grad, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner (per-model) gradient step size.
    pub alpha: f64,
    /// Outer SGD step size.
    pub beta: f64,
    pub inner_steps: usize,
    /// Differentiate through the inner updates (exact MAML) rather than
    /// evaluating the outer gradient at the adapted parameters only.
    pub second_order: bool,
    /// Adam step size of the direct simplification/projection update.
    pub aux_lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Divide each task's loss by its running mean before summing.
    pub normalize_tasks: bool,
    /// Weights and shape of the direct simplification/projection update.
    pub aux_weights: LossWeights,
    pub classification_loss: ClassificationLoss,
    /// Write a log record every this many iterations.
    pub log_every: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            inner_steps: 5,
            second_order: true,
            aux_lr: 1e-3,
            iterations: 100,
            batch_size: 24,
            seed: 0,
            normalize_tasks: false,
            aux_weights: LossWeights::default(),
            classification_loss: ClassificationLoss::CrossEntropy,
            log_every: 10,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be nonnegative");
        contract!(self.beta >= 0.0 && self.beta.is_finite(), "beta must be nonnegative");
        contract!(self.aux_lr > 0.0, "aux_lr must be positive");
        contract!(self.batch_size >= 1, "batch_size must be at least 1");
        self.aux_weights.validate()
    }
}

/// Key `(i, j)`: task `i`, model `j` of that task's pool.
pub type TaskModelKey = (usize, usize);

/// Parameters around one meta-update.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaStepState {
    pub theta: ParamSet,
    pub adapted: BTreeMap<TaskModelKey, ParamSet>,
    pub meta_gradient: Vec<Vec<f64>>,
    /// Outer loss of every `(i, j)` at its adapted parameters.
    pub outer_losses: BTreeMap<TaskModelKey, f64>,
}

/// `steps` plain gradient steps `θ ← θ - α ∇L(θ)` from `theta`. With
/// `second_order` the steps stay on the tape, so the result can be
/// differentiated with respect to `theta` exactly.
pub fn inner_adapt<F>(theta: &[Tensor<f64>], loss: F, alpha: f64, steps: usize, second_order: bool) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut cur = theta.to_vec();
    for _ in 0..steps {
        let l = loss(&cur)?;
        let g = grad(&l, &cur, second_order)?;
        cur = cur
            .iter()
            .zip(&g)
            .map(|(c, g)| c.sub(&g.scale(alpha)))
            .collect::<Result<_, _>>()?;
    }
    Ok(cur)
}

/// Adapts `theta` to each key with [`inner_adapt`] and accumulates the
/// gradient of the summed post-adaptation losses, in key order.
///
/// `loss(key, params)` is the loss of one task model, used both for the
/// inner steps and the outer objective.
pub fn meta_step<F>(theta: &ParamSet, keys: &[TaskModelKey], loss: F, cfg: &MetaConfig) -> Result<MetaStepState>
where
    F: Fn(TaskModelKey, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut meta_gradient: Vec<Vec<f64>> = theta.iter().map(|p| vec![0.0; p.data.len()]).collect();
    let mut adapted = BTreeMap::new();
    let mut outer_losses = BTreeMap::new();
    for &key in keys {
        let leaves = theta.bind::<f64>(true);
        let fast = inner_adapt(&leaves, |p| loss(key, p), cfg.alpha, cfg.inner_steps, cfg.second_order)?;
        let outer = loss(key, &fast)?;
        let value = outer.item();
        if !value.is_finite() {
            return Err(Error::NumericalAbort(format!(
                "meta step: outer loss of task {} model {} is {value}",
                key.0, key.1
            )));
        }
        for (acc, g) in meta_gradient.iter_mut().zip(grads_of(&outer, &leaves)?) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        let mut fast_params = theta.clone();
        fast_params.assign(&fast)?;
        adapted.insert(key, fast_params);
        outer_losses.insert(key, value);
    }
    Ok(MetaStepState {
        theta: theta.clone(),
        adapted,
        meta_gradient,
        outer_losses,
    })
}

/// One SGD step of size `beta` along the accumulated meta-gradient.
pub fn meta_outer_update(state: &MetaStepState, keys: &[TaskModelKey], beta: f64) -> Result<ParamSet> {
    for key in keys {
        contract!(
            state.adapted.contains_key(key),
            "no adapted parameters for task {} model {}",
            key.0,
            key.1
        );
    }
    let mut theta = state.theta.clone();
    sgd_update(&mut theta, &state.meta_gradient, beta)?;
    Ok(theta)
}

/// One task of the meta-training set: its frozen pool and training clouds.
#[derive(Clone, Copy, Debug)]
pub struct MetaTask<'a> {
    pub kind: TaskKind,
    pub pool: &'a [TaskModel],
    pub train: &'a [Sample],
}

#[derive(Clone, Debug)]
pub struct MetaOutcome {
    pub sampler: SamplerModel,
    pub log: Vec<EpochRecord>,
}

/// Draws the `count`-th batch of a stream, walking epochs in order.
fn nth_batch(stream: &BatchStream, count: usize, cache: &mut Option<(usize, Vec<TaskBatch<f64>>)>) -> Result<TaskBatch<f64>> {
    let per = stream.batches_per_epoch();
    let epoch = count / per;
    if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
        *cache = Some((epoch, stream.epoch(epoch as u64)?));
    }
    Ok(cache.as_ref().expect("filled").1[count % per].clone())
}

/// Meta-trains the sampler. Each iteration draws one batch per (task,
/// model), adapts θ to each with plain gradient steps, takes one SGD step
/// on the summed post-adaptation task losses, then one direct Adam step on
/// simplification + projection at the committed θ.
pub fn meta_train(mut sampler: SamplerModel, tasks: &[MetaTask], cfg: &MetaConfig) -> Result<MetaOutcome> {
    cfg.validate()?;
    contract!(!tasks.is_empty(), "meta-training needs at least one task");
    let mut keys = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        contract!(!t.pool.is_empty(), "task {} has an empty pool", t.kind);
        for (j, m) in t.pool.iter().enumerate() {
            contract!(m.frozen, "task model {} must be frozen", m.uid);
            contract!(m.kind == t.kind, "model {} is {}, task is {}", m.uid, m.kind, t.kind);
            keys.push((i, j));
        }
    }
    sampler
        .trained_on
        .extend(tasks.iter().flat_map(|t| t.pool.iter().map(|m| m.uid.clone())));
    let streams: Vec<BatchStream> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| BatchStream::new(t.kind, t.train, derive_seed(cfg.seed, i as u64), cfg.batch_size))
        .collect();
    let mut drawn = vec![0usize; tasks.len()];
    let mut caches: Vec<Option<(usize, Vec<TaskBatch<f64>>)>> = vec![None; tasks.len()];
    let mut running: Vec<Option<f64>> = vec![None; tasks.len()];
    let mut aux_opt = Adam::new(cfg.aux_lr);
    let task_name = tasks.iter().map(|t| t.kind.name()).collect::<Vec<_>>().join("+");
    let mut log = Vec::new();
    let mut window = (LossComponents::default(), BTreeMap::<String, f64>::new(), 0usize);
    let mut start = Instant::now();
    for it in 1..=cfg.iterations {
        let mut batches = BTreeMap::new();
        for &(i, j) in &keys {
            batches.insert((i, j), nth_batch(&streams[i], drawn[i], &mut caches[i])?);
            drawn[i] += 1;
        }
        let scales: Vec<f64> = running.iter().map(|r| if cfg.normalize_tasks { 1.0 / r.unwrap_or(1.0).max(1e-12) } else { 1.0 }).collect();
        let state = meta_step(
            &sampler.params,
            &keys,
            |(i, j), theta| {
                let batch = &batches[&(i, j)];
                let pass = sampler_pass(&sampler, theta, batch)?;
                let l = loss_sampler_task_single(&pass, &tasks[i].pool[j], batch, cfg.classification_loss)?;
                Ok(l.scale(scales[i]))
            },
            cfg,
        )?;
        let mut per_task = vec![0.0; tasks.len()];
        for (&(i, _), &v) in &state.outer_losses {
            per_task[i] += v / scales[i];
        }
        for (i, v) in per_task.iter().enumerate() {
            running[i] = Some(match running[i] {
                Some(r) => 0.9 * r + 0.1 * v,
                None => *v,
            });
        }
        sampler.params = meta_outer_update(&state, &keys, cfg.beta)?;

        // direct simplification + projection step, rotating over tasks
        let aux_batch = &batches[&((it - 1) % tasks.len(), 0)];
        let theta = sampler.params.bind::<f64>(true);
        let pass = sampler_pass(&sampler, &theta, aux_batch)?;
        let w = &cfg.aux_weights;
        let simp = loss_simplification(&pass.sample.generated, &pass.stacked, w.gamma_max, w.gamma_cov)?;
        let proj = loss_projection(&pass.log_temp);
        let aux = simp.scale(w.w_simp).add(&proj.scale(w.w_proj))?;
        if !aux.item().is_finite() {
            return Err(Error::NumericalAbort(format!(
                "meta iteration {it}: simplification={} projection={}",
                simp.item(),
                proj.item()
            )));
        }
        aux_opt.update(&mut sampler.params, &grads_of(&aux, &theta)?)?;

        let task_sum: f64 = per_task.iter().sum();
        window.0.task += task_sum;
        window.0.simplification += simp.item();
        window.0.projection += proj.item();
        window.0.total += task_sum + w.w_simp * simp.item() + w.w_proj * proj.item();
        for (t, v) in tasks.iter().zip(&per_task) {
            *window.1.entry(t.kind.name().to_string()).or_insert(0.0) += v;
        }
        window.2 += 1;
        if it % cfg.log_every.max(1) == 0 || it == cfg.iterations {
            let n = window.2 as f64;
            let mut rec = EpochRecord::new("meta", tasks[0].kind, cfg.seed, it);
            rec.task = task_name.clone();
            rec.losses = LossComponents {
                task: window.0.task / n,
                simplification: window.0.simplification / n,
                projection: window.0.projection / n,
                total: window.0.total / n,
            };
            rec.task_losses = window.1.iter().map(|(k, v)| (k.clone(), v / n)).collect();
            rec.temperature = sampler.temperature();
            rec.wall_ms = start.elapsed().as_millis() as u64;
            log.push(rec);
            window = (LossComponents::default(), BTreeMap::new(), 0);
            start = Instant::now();
        }
    }
    Ok(MetaOutcome { sampler, log })
}

/// Gradient of the sampler's full training loss, exposed for diagnostics.
pub fn sampler_gradient(
    sampler: &SamplerModel,
    pool: &[&TaskModel],
    batch: &TaskBatch<f64>,
    w: &LossWeights,
    cls: ClassificationLoss,
) -> Result<Vec<Vec<f64>>> {
    let theta = sampler.params.bind::<f64>(true);
    let l = step_losses(sampler, &theta, pool, batch, w, cls)?;
    grads_of(&l.total, &theta)
}
