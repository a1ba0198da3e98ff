//! Deterministic synthetic shape data: labelled clouds in fixed splits,
//! retrieval episodes, registration pairs, and an on-disk layout.

pub(crate) mod episodes;
mod shapes;
mod store;

pub use episodes::{
    gen_registration_pair, gen_retrieval_episode, gen_retrieval_pair, RegistrationPair,
    RetrievalEpisode, RetrievalPair,
};
pub use shapes::{gen_shape, ShapeClass, ShapeRegime};
pub use store::{read_dataset, write_dataset, DatasetIndex, IndexEntry};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Result};
use crate::geometry::PointCloud;

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a stream rooted at `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub m: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub jitter: f64,
    pub rotation_deg: f64,
    pub seed: u64,
    pub distribution_shift: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            m: 64,
            train_per_class: 120,
            val_per_class: 40,
            test_per_class: 40,
            jitter: 0.01,
            rotation_deg: 180.0,
            seed: 0,
            distribution_shift: false,
        }
    }
}

/// Relative class frequencies under distribution shift.
const SHIFT_CLASS_WEIGHTS: [f64; 8] = [1.5, 0.5, 1.25, 0.75, 1.0, 1.5, 0.5, 1.0];

impl DatasetSpec {
    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Val => self.val_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Number of clouds of `class` in `split`.
    pub fn class_count(&self, split: Split, class: usize) -> usize {
        let base = self.per_class(split);
        if self.distribution_shift {
            ((base as f64 * SHIFT_CLASS_WEIGHTS[class]).round() as usize).max(2)
        } else {
            base
        }
    }

    pub fn regime(&self) -> ShapeRegime {
        if self.distribution_shift {
            ShapeRegime {
                jitter: self.jitter * 2.0,
                rotation_deg: self.rotation_deg,
                stretch: (0.15, 1.0),
            }
        } else {
            ShapeRegime {
                jitter: self.jitter,
                rotation_deg: self.rotation_deg,
                stretch: (1.0, 1.0),
            }
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn split_seed(&self, split: Split) -> u64 {
        let regime_tag = if self.distribution_shift { 0x5348_4946_54 } else { 0x4241_5345 };
        derive_seed(derive_seed(self.seed, regime_tag), split as u64)
    }

    /// Seed of item `index` of `class` in `split`.
    pub fn item_seed(&self, split: Split, class: usize, index: usize) -> u64 {
        derive_seed(self.split_seed(split), (class as u64) << 32 | index as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud<f64>,
    pub label: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean over all clouds of the mean nearest-neighbour spacing.
    pub fn mean_nn_spacing(&self) -> f64 {
        let all: Vec<&Sample> = Split::ALL.iter().flat_map(|&s| self.split(s)).collect();
        all.iter().map(|s| s.cloud.mean_nn_spacing()).sum::<f64>() / all.len() as f64
    }
}

/// Generates every split. Items are ordered by class, then index.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    contract!(spec.m >= 8, "dataset needs m >= 8, got {}", spec.m);
    contract!(spec.jitter >= 0.0, "jitter must be nonnegative");
    let regime = spec.regime();
    let gen_split = |split: Split| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for (label, &class) in ShapeClass::ALL.iter().enumerate() {
            for i in 0..spec.class_count(split, label) {
                let seed = spec.item_seed(split, label, i);
                out.push(Sample {
                    cloud: gen_shape(class, seed, spec.m, &regime)?,
                    label,
                    seed,
                });
            }
        }
        Ok(out)
    };
    Ok(Dataset {
        spec: spec.clone(),
        train: gen_split(Split::Train)?,
        val: gen_split(Split::Val)?,
        test: gen_split(Split::Test)?,
    })
}

#[cfg(test)]
mod tests;
