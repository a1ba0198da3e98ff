use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::TaskKind;

/// Epoch means of the loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub task: f64,
    pub simplification: f64,
    pub projection: f64,
    pub total: f64,
}

/// One metric-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub engine: String,
    /// Task name, or a `+`-joined list for meta-training.
    pub task: String,
    pub seed: u64,
    pub epoch: usize,
    pub losses: LossComponents,
    /// Per-task loss components (meta-training only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub task_losses: BTreeMap<String, f64>,
    pub temperature: f64,
    /// Evaluation metrics keyed by `<pool>/<model uid>` and `<pool>/mean`.
    pub eval: BTreeMap<String, f64>,
    pub wall_ms: u64,
}

impl EpochRecord {
    pub fn new(engine: &str, task: TaskKind, seed: u64, epoch: usize) -> Self {
        Self {
            engine: engine.to_string(),
            task: task.name().to_string(),
            seed,
            epoch,
            losses: LossComponents::default(),
            task_losses: BTreeMap::new(),
            temperature: 0.0,
            eval: BTreeMap::new(),
            wall_ms: 0,
        }
    }

    /// The record with its timing zeroed, for run-to-run comparison.
    pub fn untimed(&self) -> Self {
        Self {
            wall_ms: 0,
            ..self.clone()
        }
    }
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: Write>(w: &mut W, records: &[EpochRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
