use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSpec, Sample, Split};
use crate::error::{Error, Result};
use crate::geometry::{read_pcb, write_pcb};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub split: Split,
    pub class: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub spec: DatasetSpec,
    pub spec_hash: String,
    pub entries: Vec<IndexEntry>,
}

/// Writes one PCB1 file per cloud under `<dir>/<split>/` plus `index.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetIndex> {
    let mut entries = Vec::with_capacity(dataset.len());
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub)?;
        for (i, s) in dataset.split(split).iter().enumerate() {
            let file = format!("{}/{:05}.pcb", split.name(), i);
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            write_pcb(&mut w, &s.cloud)?;
            w.flush()?;
            entries.push(IndexEntry {
                file,
                split,
                class: s.label,
                seed: s.seed,
            });
        }
    }
    let index = DatasetIndex {
        spec: dataset.spec.clone(),
        spec_hash: dataset.spec.hash(),
        entries,
    };
    fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let index: DatasetIndex = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
    if index.spec.hash() != index.spec_hash {
        return Err(Error::Format(format!(
            "{}: spec hash mismatch",
            dir.join(INDEX_FILE).display()
        )));
    }
    let mut ds = Dataset {
        spec: index.spec.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for e in index.entries {
        let mut r = BufReader::new(File::open(dir.join(&e.file))?);
        let sample = Sample {
            cloud: read_pcb(&mut r)?,
            label: e.class,
            seed: e.seed,
        };
        match e.split {
            Split::Train => ds.train.push(sample),
            Split::Val => ds.val.push(sample),
            Split::Test => ds.test.push(sample),
        }
    }
    Ok(ds)
}
