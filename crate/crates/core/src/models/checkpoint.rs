//! Checkpoints: the parameters as "TSR1" records, followed by a JSON
//! manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, SamplerModel, TaskKind, TaskModel};
use crate::error::{Error, Result};
use crate::geometry::SampleSpec;
use crate::tensor::{decode_records, write_record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ManifestModel {
    Task {
        task_kind: TaskKind,
        uid: String,
        m: usize,
        frozen: bool,
    },
    Sampler {
        spec: SampleSpec,
        k_proj: usize,
        trained_on: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub model: ManifestModel,
    pub seed: u64,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    /// Free-form training metadata.
    pub metadata: serde_json::Value,
}

fn encode(params: &ParamSet, manifest: &Manifest) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in params.iter() {
        write_record(&mut out, &p.shape, &p.data)?;
    }
    out.extend(serde_json::to_vec_pretty(manifest)?);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(ParamSet, Manifest)> {
    let (records, end) = decode_records::<f64>(bytes)?;
    let manifest: Manifest = serde_json::from_slice(&bytes[end..])?;
    if manifest.names.len() != records.len() || manifest.shapes.len() != records.len() {
        return Err(Error::Format(format!(
            "manifest lists {} parameters, file holds {}",
            manifest.names.len(),
            records.len()
        )));
    }
    let mut params = ParamSet::new();
    for ((shape, data), (name, expect)) in records.into_iter().zip(manifest.names.iter().zip(&manifest.shapes)) {
        if &shape != expect {
            return Err(Error::Format(format!("parameter {name}: shape {shape:?}, manifest {expect:?}")));
        }
        params.push(name.clone(), shape, data);
    }
    Ok((params, manifest))
}

fn layout(params: &ParamSet) -> (Vec<String>, Vec<Vec<usize>>) {
    params.iter().map(|p| (p.name.clone(), p.shape.clone())).unzip()
}

pub fn save_task_model(model: &TaskModel, path: &Path, metadata: serde_json::Value) -> Result<()> {
    let (names, shapes) = layout(&model.params);
    let manifest = Manifest {
        model: ManifestModel::Task {
            task_kind: model.kind,
            uid: model.uid.clone(),
            m: model.m,
            frozen: model.frozen,
        },
        seed: model.seed,
        names,
        shapes,
        metadata,
    };
    fs::write(path, encode(&model.params, &manifest)?)?;
    Ok(())
}

pub fn load_task_model(path: &Path) -> Result<(TaskModel, Manifest)> {
    let (params, manifest) = decode(&fs::read(path)?)?;
    let ManifestModel::Task { task_kind, uid, m, frozen } = manifest.model.clone() else {
        return Err(Error::Format(format!("{} is not a task-model checkpoint", path.display())));
    };
    let model = TaskModel {
        uid,
        kind: task_kind,
        seed: manifest.seed,
        m,
        params,
        frozen,
    };
    Ok((model, manifest))
}

pub fn save_sampler(sampler: &SamplerModel, path: &Path, metadata: serde_json::Value) -> Result<()> {
    let (names, shapes) = layout(&sampler.params);
    let manifest = Manifest {
        model: ManifestModel::Sampler {
            spec: sampler.spec,
            k_proj: sampler.k_proj,
            trained_on: sampler.trained_on.iter().cloned().collect(),
        },
        seed: sampler.seed,
        names,
        shapes,
        metadata,
    };
    fs::write(path, encode(&sampler.params, &manifest)?)?;
    Ok(())
}

pub fn load_sampler(path: &Path) -> Result<(SamplerModel, Manifest)> {
    let (params, manifest) = decode(&fs::read(path)?)?;
    let ManifestModel::Sampler { spec, k_proj, trained_on } = manifest.model.clone() else {
        return Err(Error::Format(format!("{} is not a sampler checkpoint", path.display())));
    };
    let sampler = SamplerModel {
        spec,
        k_proj,
        seed: manifest.seed,
        params,
        trained_on: trained_on.into_iter().collect(),
    };
    Ok((sampler, manifest))
}
