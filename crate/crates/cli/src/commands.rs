use std::fs;
use std::path::{Path, PathBuf};

use metasampler::data::{derive_seed, gen_dataset, read_dataset, write_dataset, Dataset, DatasetSpec, Split};
use metasampler::geometry::SampleSpec;
use metasampler::losses::ClassificationLoss;
use metasampler::models::{
    load_sampler, load_task_model, meets_bar, pretrain_task_model, save_sampler, save_task_model, PretrainConfig,
    SamplerModel, TaskKind, TaskModel,
};
use metasampler::training::{
    self, evaluate, evaluate_method, model_metric, train_joint, train_single, write_jsonl, EpochRecord, EvalMode,
    EvalSet, MetaConfig, MetaTask, PoolMetrics, SamplingMethod, TaskData, TrainConfig,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::jobs::run_jobs;
use crate::{
    AdaptArgs, Baseline, CliError, CliResult, EvalArgs, EvalModeArg, GenDataArgs, Init, MetaTrainArgs, Mode,
    PretrainArgs, SamplerTrainArgs, TrainSamplerArgs,
};

/// Seed of the fixed evaluation episodes and pairs.
pub const EVAL_SEED: u64 = 0x5eed_e7a1;

pub struct Context {
    pub root: PathBuf,
    pub workers: usize,
}

impl Context {
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn model_path(&self, kind: TaskKind, seed: u64) -> PathBuf {
        self.path(format!("models/{}/{seed}.ckpt", kind.name()))
    }

    pub fn run_dir(&self, name: &str, seed: u64) -> PathBuf {
        self.path(format!("runs/{name}/seed{seed}"))
    }

    pub fn load_data(&self, name: &str) -> CliResult<Dataset> {
        let dir = self.path(name);
        if !dir.join("index.json").is_file() {
            return Err(CliError::Input(format!("no dataset at {} (run gen-data first)", dir.display())));
        }
        Ok(read_dataset(&dir)?)
    }

    pub fn load_models(&self, kind: TaskKind, seeds: &[u64]) -> CliResult<Vec<TaskModel>> {
        seeds
            .iter()
            .map(|&s| {
                let path = self.model_path(kind, s);
                if !path.is_file() {
                    return Err(CliError::Input(format!("missing task model {}", path.display())));
                }
                let (model, _) = load_task_model(&path)?;
                if model.kind != kind {
                    return Err(CliError::Input(format!("{} holds a {} model", path.display(), model.kind)));
                }
                Ok(model.freeze())
            })
            .collect()
    }

    pub fn load_sampler(&self, path: &Path) -> CliResult<SamplerModel> {
        let file = if path.is_dir() { path.join("sampler.ckpt") } else { path.to_path_buf() };
        if !file.is_file() {
            return Err(CliError::Input(format!("missing sampler checkpoint {}", file.display())));
        }
        Ok(load_sampler(&file)?.0)
    }
}

fn cls_loss(bce: bool) -> ClassificationLoss {
    if bce {
        ClassificationLoss::OneHotBce
    } else {
        ClassificationLoss::CrossEntropy
    }
}

fn eval_mode(m: EvalModeArg) -> EvalMode {
    match m {
        EvalModeArg::Matched => EvalMode::Matched,
        EvalModeArg::Soft => EvalMode::Soft,
    }
}

fn train_config(a: &SamplerTrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: a.batch_size,
        lr: a.lr,
        epochs: a.epochs,
        seed,
        max_batches: a.max_batches,
        classification_loss: cls_loss(a.bce),
        eval_mode: eval_mode(a.eval_mode),
        ..TrainConfig::default()
    }
}

fn sample_spec(ds: &Dataset, ratio: usize) -> CliResult<SampleSpec> {
    if ratio < 2 {
        return Err(CliError::Input(format!("a learned sampler needs --ratio >= 2, got {ratio}")));
    }
    Ok(SampleSpec::from_ratio(ds.spec.m, ratio)?)
}

/// Writes `sampler.ckpt`, `log.jsonl` and `config.json` into the run's seed
/// directory.
fn save_run(dir: &Path, sampler: &SamplerModel, log: &[EpochRecord], cfg: &ExperimentConfig, task: &str) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let meta = serde_json::json!({
        "task": task,
        "command": cfg.command,
        "config_hash": cfg.hash(),
    });
    save_sampler(sampler, &dir.join("sampler.ckpt"), meta)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, log)?;
    fs::write(dir.join("log.jsonl"), buf)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(())
}

fn fmt_metric(v: Option<&f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn print_run_table(kind: &str, metric: &str, seeds: &[u64], logs: &[Vec<EpochRecord>]) {
    println!("{:<6} {:>6} {:>12} {:>12} {:>10} {:>11}", "seed", "epoch", format!("test {metric}"), "train", "loss", "temperature");
    for (seed, log) in seeds.iter().zip(logs) {
        match log.last() {
            Some(r) => println!(
                "{seed:<6} {:>6} {:>12} {:>12} {:>10.4} {:>11.4}",
                r.epoch,
                fmt_metric(r.eval.get("test/mean")),
                fmt_metric(r.eval.get("train/mean")),
                r.losses.total,
                r.temperature
            ),
            None => println!("{seed:<6} {:>6} (no epochs run)", 0),
        }
    }
    let _ = kind;
}

pub fn gen_data(ctx: &Context, a: &GenDataArgs) -> CliResult<()> {
    let spec = DatasetSpec {
        m: a.m,
        train_per_class: a.train_per_class,
        val_per_class: a.val_per_class,
        test_per_class: a.test_per_class,
        seed: a.seed,
        distribution_shift: a.shift,
        ..DatasetSpec::default()
    };
    let ds = gen_dataset(&spec)?;
    let dir = ctx.path(&a.data);
    let index = write_dataset(&ds, &dir)?;
    println!("dataset {} (spec {})", dir.display(), &index.spec_hash[..16]);
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("  {:<5} {:>6} clouds", split.name(), ds.split(split).len());
    }
    println!("  mean nearest-neighbour spacing {:.4}", ds.mean_nn_spacing());
    Ok(())
}

pub fn pretrain(ctx: &Context, a: &PretrainArgs) -> CliResult<()> {
    let kind = a.task.kind();
    let ds = ctx.load_data(&a.data)?;
    let mut cfg = PretrainConfig::for_kind(kind);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.min_epochs = a.min_epochs.unwrap_or(cfg.min_epochs);
    cfg.max_epochs = a.max_epochs.unwrap_or(cfg.max_epochs).max(cfg.min_epochs);
    cfg.max_batches = a.max_batches;
    let flags = serde_json::to_value(a)?;
    let results = run_jobs(ctx.workers, &a.seeds, |seed| {
        let mut exp = ExperimentConfig::new("pretrain", seed, flags.clone());
        exp.dataset = Some(ds.spec.clone());
        exp.pretrain = Some(cfg.clone());
        let model = pretrain_task_model(kind, seed, &ds, &cfg)?;
        let val = EvalSet::build(kind, &ds.val, cfg.eval_count, cfg.n_way, derive_seed(seed, 2))?;
        let metric = model_metric(&model, &val, &SamplingMethod::Identity)?;
        let path = ctx.model_path(kind, seed);
        fs::create_dir_all(path.parent().expect("model path has a parent"))?;
        let meta = serde_json::json!({
            "val_metric": metric,
            "metric": kind.metric_name(),
            "meets_bar": meets_bar(kind, metric, &ds, &val),
            "config_hash": exp.hash(),
        });
        save_task_model(&model, &path, meta)?;
        fs::write(path.with_extension("json"), exp.to_json())?;
        Ok((model.uid, metric))
    })?;
    println!("{:<24} {:>14}", "model", format!("val {}", kind.metric_name()));
    for (uid, metric) in results {
        println!("{uid:<24} {metric:>14.4}");
    }
    Ok(())
}

/// Same check the training loops make on model uids, done before any model loads.
fn disjoint_seeds(train: &[u64], test: &[u64]) -> CliResult<()> {
    match train.iter().find(|s| test.contains(s)) {
        Some(s) => Err(CliError::Core(metasampler::Error::PoolOverlap(format!("model seed {s} is in both train and test pools")))),
        None => Ok(()),
    }
}

pub fn train_sampler(ctx: &Context, a: &TrainSamplerArgs) -> CliResult<()> {
    let kind = a.task.kind();
    let k = match (a.mode, a.k) {
        (Mode::Single, None | Some(1)) => 1,
        (Mode::Single, Some(k)) => {
            return Err(CliError::Input(format!("single mode trains against one model, got --k {k}")))
        }
        (Mode::Joint, k) => k.unwrap_or(3),
    };
    if k == 0 || a.train_models.len() < k {
        return Err(CliError::Input(format!("--k {k} needs at least {k} --train-models")));
    }
    disjoint_seeds(&a.train_models[..k], &a.test_models)?;
    let ds = ctx.load_data(&a.data)?;
    let pool = ctx.load_models(kind, &a.train_models[..k])?;
    let test = ctx.load_models(kind, &a.test_models)?;
    let spec = sample_spec(&ds, a.train.ratio)?;
    let set = EvalSet::build(kind, &ds.test, a.train.eval_count, a.train.n_way, EVAL_SEED)?;
    let mode = match a.mode {
        Mode::Single => "single",
        Mode::Joint => "joint",
    };
    let name = a.name.clone().unwrap_or_else(|| format!("{mode}-{}-r{}-k{k}", kind.name(), a.train.ratio));
    let flags = serde_json::to_value(a)?;
    let logs = run_jobs(ctx.workers, &a.seeds, |seed| {
        let cfg = train_config(&a.train, seed);
        let mut exp = ExperimentConfig::new("train-sampler", seed, flags.clone());
        exp.dataset = Some(ds.spec.clone());
        exp.sample = Some(spec);
        exp.train = Some(cfg.clone());
        let sampler = SamplerModel::new(spec, a.train.k_proj, seed)?;
        let data = TaskData { kind, train: &ds.train, eval: &set };
        let refs: Vec<&TaskModel> = pool.iter().collect();
        let out = match a.mode {
            Mode::Single => train_single(sampler, refs[0], &test, &data, &cfg)?,
            Mode::Joint => train_joint(sampler, &refs, &test, &data, &cfg)?,
        };
        save_run(&ctx.run_dir(&name, seed), &out.sampler, &out.log, &exp, kind.name())?;
        Ok(out.log)
    })?;
    println!("run {name}");
    print_run_table(kind.name(), kind.metric_name(), &a.seeds, &logs);
    Ok(())
}

pub fn meta_train(ctx: &Context, a: &MetaTrainArgs) -> CliResult<()> {
    if a.tasks.is_empty() {
        return Err(CliError::Input("--tasks is empty".into()));
    }
    let ds = ctx.load_data(&a.data)?;
    let spec = sample_spec(&ds, a.ratio)?;
    let kinds: Vec<TaskKind> = a.tasks.iter().map(|t| t.kind()).collect();
    let pools = kinds.iter().map(|&k| ctx.load_models(k, &a.models)).collect::<CliResult<Vec<_>>>()?;
    let task_name = kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+");
    let name = a.name.clone().unwrap_or_else(|| format!("meta-r{}", a.ratio));
    let flags = serde_json::to_value(a)?;
    let logs = run_jobs(ctx.workers, &a.seeds, |seed| {
        let cfg = MetaConfig {
            alpha: a.alpha,
            beta: a.beta,
            inner_steps: a.inner_steps,
            second_order: a.second_order,
            aux_lr: a.aux_lr,
            iterations: a.iterations,
            batch_size: a.batch_size,
            seed,
            normalize_tasks: a.normalize_tasks,
            classification_loss: cls_loss(a.bce),
            log_every: a.log_every,
            ..MetaConfig::default()
        };
        let mut exp = ExperimentConfig::new("meta-train", seed, flags.clone());
        exp.dataset = Some(ds.spec.clone());
        exp.sample = Some(spec);
        exp.meta = Some(cfg.clone());
        let tasks: Vec<MetaTask> = kinds
            .iter()
            .zip(&pools)
            .map(|(&kind, pool)| MetaTask { kind, pool, train: &ds.train })
            .collect();
        let out = training::meta_train(SamplerModel::new(spec, a.k_proj, seed)?, &tasks, &cfg)?;
        save_run(&ctx.run_dir(&name, seed), &out.sampler, &out.log, &exp, &task_name)?;
        Ok(out.log)
    })?;
    println!("run {name}");
    println!("{:<6} {:>10} {:>10} {:>10} {:>11}", "seed", "iteration", "task", "total", "temperature");
    for (seed, log) in a.seeds.iter().zip(&logs) {
        if let Some(r) = log.last() {
            println!(
                "{seed:<6} {:>10} {:>10.4} {:>10.4} {:>11.4}",
                r.epoch, r.losses.task, r.losses.total, r.temperature
            );
        }
    }
    Ok(())
}

pub fn adapt(ctx: &Context, a: &AdaptArgs) -> CliResult<()> {
    let kind = a.task.kind();
    disjoint_seeds(&a.train_models, &a.test_models)?;
    let ds = ctx.load_data(&a.data)?;
    let spec = sample_spec(&ds, a.train.ratio)?;
    let pool = ctx.load_models(kind, &a.train_models)?;
    let test = ctx.load_models(kind, &a.test_models)?;
    let set = EvalSet::build(kind, &ds.test, a.train.eval_count, a.train.n_way, EVAL_SEED)?;
    let init = match a.init {
        Init::Meta => "meta",
        Init::Scratch => "scratch",
    };
    if a.init == Init::Meta && a.meta.is_none() {
        return Err(CliError::Input("--init meta needs --meta <run name>".into()));
    }
    let name = a.name.clone().unwrap_or_else(|| format!("adapt-{init}-{}-r{}", kind.name(), a.train.ratio));
    let flags = serde_json::to_value(a)?;
    let logs = run_jobs(ctx.workers, &a.seeds, |seed| {
        let sampler = match (&a.init, &a.meta) {
            (Init::Meta, Some(meta)) => {
                let s = ctx.load_sampler(&ctx.run_dir(meta, seed))?;
                if s.spec != spec {
                    return Err(CliError::Input(format!(
                        "meta sampler samples {} of {} points, --ratio {} asks for {} of {}",
                        s.spec.n, s.spec.m, a.train.ratio, spec.n, spec.m
                    )));
                }
                s
            }
            // the same initialization meta-training starts from
            _ => SamplerModel::new(spec, a.train.k_proj, seed)?,
        };
        let cfg = train_config(&a.train, seed);
        let mut exp = ExperimentConfig::new("adapt", seed, flags.clone());
        exp.dataset = Some(ds.spec.clone());
        exp.sample = Some(spec);
        exp.train = Some(cfg.clone());
        let data = TaskData { kind, train: &ds.train, eval: &set };
        let refs: Vec<&TaskModel> = pool.iter().collect();
        let out = training::adapt(sampler, &refs, &test, &data, &cfg)?;
        save_run(&ctx.run_dir(&name, seed), &out.sampler, &out.log, &exp, kind.name())?;
        Ok(out.log)
    })?;
    println!("run {name}");
    print_run_table(kind.name(), kind.metric_name(), &a.seeds, &logs);
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    method: String,
    mean: f64,
    per_model: std::collections::BTreeMap<String, f64>,
}

impl EvalRow {
    fn new(method: String, m: PoolMetrics) -> Self {
        Self { method, mean: m.mean, per_model: m.per_model }
    }
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> CliResult<()> {
    let kind = a.task.kind();
    let ds = ctx.load_data(&a.data)?;
    let test = ctx.load_models(kind, &a.test_models)?;
    let set = EvalSet::build(kind, &ds.test, a.eval_count, a.n_way, EVAL_SEED)?;
    if a.ratio == 0 || ds.spec.m % a.ratio != 0 {
        return Err(CliError::Input(format!("--ratio {} does not divide m={}", a.ratio, ds.spec.m)));
    }
    let n = ds.spec.m / a.ratio;
    if a.ratio == 1 && !a.sampler.is_empty() {
        return Err(CliError::Input("learned samplers cannot run at ratio 1".into()));
    }
    let mut rows = vec![EvalRow::new("unsampled".into(), evaluate_method(&test, &set, &SamplingMethod::Identity)?)];
    for b in &a.baselines {
        match b {
            Baseline::Fps => rows.push(EvalRow::new("fps".into(), evaluate_method(&test, &set, &SamplingMethod::Fps { n })?)),
            Baseline::Idis => rows.push(EvalRow::new(
                "idis".into(),
                evaluate_method(&test, &set, &SamplingMethod::Idis { n, k: a.idis_k.min(ds.spec.m - 1) })?,
            )),
            Baseline::Random => {
                for &seed in &a.seeds {
                    let m = evaluate_method(&test, &set, &SamplingMethod::Random { n, seed })?;
                    rows.push(EvalRow::new(format!("random/seed{seed}"), m));
                }
            }
        }
    }
    for name in &a.sampler {
        for &seed in &a.seeds {
            let sampler = ctx.load_sampler(&ctx.run_dir(name, seed))?;
            if sampler.spec.n != n {
                return Err(CliError::Input(format!(
                    "sampler {name}/seed{seed} keeps {} points, --ratio {} needs {n}",
                    sampler.spec.n, a.ratio
                )));
            }
            let m = evaluate(&sampler, &test, &set, eval_mode(a.eval_mode))?;
            rows.push(EvalRow::new(format!("{name}/seed{seed}"), m));
        }
    }
    let name = a.name.clone().unwrap_or_else(|| format!("eval-{}-r{}", kind.name(), a.ratio));
    let mut exp = ExperimentConfig::new("eval", a.seeds.first().copied().unwrap_or(0), serde_json::to_value(a)?);
    exp.dataset = Some(ds.spec.clone());
    let report = serde_json::json!({
        "config_hash": exp.hash(),
        "config": exp,
        "task": kind.name(),
        "metric": kind.metric_name(),
        "ratio": a.ratio,
        "n": n,
        "rows": rows,
    });
    let path = ctx.path(format!("eval/{name}.json"));
    fs::create_dir_all(path.parent().expect("eval path has a parent"))?;
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("{} at ratio {} ({n} of {} points), {} test models", kind.name(), a.ratio, ds.spec.m, test.len());
    println!("{:<32} {:>12}", "method", kind.metric_name());
    for r in &rows {
        println!("{:<32} {:>12.4}", r.method, r.mean);
    }
    println!("wrote {}", path.display());
    Ok(())
}
