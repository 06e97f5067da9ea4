use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::container::{self, TensorEntry};
use crate::error::{Error, Result};
use crate::gnn::{GnnModel, ModelKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EPCKPT1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelSpec,
    strategy: Strategy,
    seed: u64,
    epochs: usize,
    final_loss: Option<f64>,
    masked_edges: Option<usize>,
    tensors: Vec<TensorEntry>,
}

/// How a backbone was pre-trained.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainMeta {
    pub strategy: Strategy,
    pub epochs: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
    /// Edges hidden from message passing during link-prediction training.
    pub masked_edges: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: GnnModel,
    pub meta: PretrainMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.model.named_tensors();
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: ModelSpec { kind: self.model.kind(), dims: self.model.dims() },
            strategy: self.meta.strategy,
            seed: self.meta.seed,
            epochs: self.meta.epochs,
            final_loss: self.meta.final_loss.filter(|l| l.is_finite()),
            masked_edges: self.meta.masked_edges,
            tensors: container::tensor_table(&tensors),
        };
        container::encode(CHECKPOINT_MAGIC, &header, &tensors)
    }

    /// Parses a checkpoint, optionally insisting on a backbone kind.
    pub fn from_bytes(bytes: &[u8], expected: Option<ModelKind>) -> Result<Self> {
        let (header, payload): (Header, _) = container::decode(CHECKPOINT_MAGIC, bytes, "checkpoint")?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {}", header.version)));
        }
        if let Some(kind) = expected {
            if kind != header.model.kind {
                return Err(Error::Compatibility(format!(
                    "checkpoint holds a {} backbone but {kind} was requested",
                    header.model.kind
                )));
            }
        }
        let tensors = container::read_tensors(&header.tensors, payload, "checkpoint")?;
        let model = GnnModel::from_named(header.model.kind, &header.model.dims, tensors)?;
        let meta = PretrainMeta {
            strategy: header.strategy,
            epochs: header.epochs,
            seed: header.seed,
            final_loss: header.final_loss,
            masked_edges: header.masked_edges,
        };
        Ok(Self { model, meta })
    }

    /// Content digest of the backbone weights.
    pub fn digest(&self) -> String {
        self.model.digest()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?, None)
}

pub fn load_checkpoint_as(path: impl AsRef<Path>, kind: ModelKind) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?, Some(kind))
}
