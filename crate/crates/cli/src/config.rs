//! The full configuration of one command run, and its hash.

use metasampler::data::DatasetSpec;
use metasampler::geometry::SampleSpec;
use metasampler::models::PretrainConfig;
use metasampler::training::{MetaConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub seed: u64,
    pub dataset: Option<DatasetSpec>,
    pub sample: Option<SampleSpec>,
    pub pretrain: Option<PretrainConfig>,
    pub train: Option<TrainConfig>,
    pub meta: Option<MetaConfig>,
    /// The command-line flags as given.
    pub flags: serde_json::Value,
}

impl ExperimentConfig {
    pub fn new(command: &str, seed: u64, flags: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            dataset: None,
            sample: None,
            pretrain: None,
            train: None,
            meta: None,
            flags,
        }
    }

    /// Hex sha256 of the JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["config_hash"] = self.hash().into();
        serde_json::to_string_pretty(&v).expect("config serializes")
    }
}
