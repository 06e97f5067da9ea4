//! Self-supervised pre-training of backbones and checkpoint persistence.

mod augment;
mod checkpoint;
mod loss;
mod strategies;

use serde::{Deserialize, Serialize};

pub use augment::{augment_graph, Augmentation};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint, ModelSpec, PretrainMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use loss::{ntxent_loss, ProjectionHead};
pub use strategies::{perturb_model, pretrain, pretrain_ep_gppt, pretrain_ep_graphprompt, pretrain_graphcl, pretrain_simgrace};

use crate::error::{Error, Result};
use crate::gnn::Readout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Graphcl,
    Simgrace,
    EpGppt,
    EpGraphprompt,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Graphcl, Strategy::Simgrace, Strategy::EpGppt, Strategy::EpGraphprompt];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Graphcl => "graphcl",
            Strategy::Simgrace => "simgrace",
            Strategy::EpGppt => "ep-gppt",
            Strategy::EpGraphprompt => "ep-graphprompt",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}' (expected graphcl, simgrace, ep-gppt or ep-graphprompt)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Graphs per contrastive batch on graph-level datasets.
    pub batch_size: usize,
    /// Augmented view pairs per epoch when the dataset is a single graph.
    pub view_pairs: usize,
    pub drop_ratio: f64,
    pub temperature: f64,
    pub noise_scale: f64,
    pub mask_ratio: f64,
    /// Pooling of node rows into view representations.
    pub readout: Readout,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Graphcl,
            epochs: 100,
            learning_rate: 0.001,
            batch_size: 32,
            view_pairs: 4,
            drop_ratio: 0.2,
            temperature: 0.5,
            noise_scale: 0.1,
            mask_ratio: 0.2,
            readout: Readout::Mean,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("drop_ratio", self.drop_ratio), ("mask_ratio", self.mask_ratio)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config(format!("noise_scale must be non-negative, got {}", self.noise_scale)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 || self.view_pairs < 2 {
            return Err(Error::Config("batch_size and view_pairs must be at least 2".into()));
        }
        Ok(())
    }
}

/// A finished pre-training run.
#[derive(Clone, Debug)]
pub struct PretrainRun {
    pub checkpoint: Checkpoint,
    /// Mean loss of every epoch.
    pub losses: Vec<f64>,
}
