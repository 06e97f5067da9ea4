use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, PromptParams, PromptedClassifier};
use crate::container::{self, TensorEntry};
use crate::error::{Error, Result};
use crate::gnn::{GnnModel, Linear, Readout};
use crate::graph::Task;
use crate::pretrain::ModelSpec;

pub const PROMPT_MAGIC: &[u8; 8] = b"EPPRMT1\0";
pub const PROMPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    method: Method,
    backbone_digest: String,
    model: ModelSpec,
    task: Task,
    readout: Readout,
    slope: Option<f64>,
    shots: usize,
    split_seed: u64,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Tuned prompts and head, tied to the backbone they were learned on.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptFile {
    pub classifier: PromptedClassifier,
    /// Digest of the backbone weights.
    pub backbone_digest: String,
    pub model: ModelSpec,
    pub task: Task,
    pub shots: usize,
    pub split_seed: u64,
    pub seed: u64,
}

impl PromptFile {
    pub fn new(model: &GnnModel, classifier: PromptedClassifier, task: Task, shots: usize, split_seed: u64, seed: u64) -> Self {
        Self {
            classifier,
            backbone_digest: model.digest(),
            model: ModelSpec { kind: model.kind(), dims: model.dims() },
            task,
            shots,
            split_seed,
            seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.classifier;
        let mut tensors = c.prompts.named_tensors();
        tensors.extend([("head.weight".to_string(), &c.head.weight), ("head.bias".to_string(), &c.head.bias)]);
        let slope = match &c.prompts {
            PromptParams::EdgePlus(p) => Some(p.slope),
            _ => None,
        };
        let header = Header {
            version: PROMPT_VERSION,
            method: c.method,
            backbone_digest: self.backbone_digest.clone(),
            model: self.model.clone(),
            task: self.task,
            readout: c.readout,
            slope,
            shots: self.shots,
            split_seed: self.split_seed,
            seed: self.seed,
            tensors: container::tensor_table(&tensors),
        };
        container::encode(PROMPT_MAGIC, &header, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (Header, _) = container::decode(PROMPT_MAGIC, bytes, "prompt file")?;
        if header.version != PROMPT_VERSION {
            return Err(Error::Format(format!("prompt file: unsupported version {}", header.version)));
        }
        let mut tensors: BTreeMap<String, _> = container::read_tensors(&header.tensors, payload, "prompt file")?;
        let mut take = |name: &str| tensors.remove(name).ok_or_else(|| Error::Format(format!("prompt file: missing '{name}'")));
        let head = Linear::new(take("head.weight")?, take("head.bias")?)?;
        let prompts = PromptParams::from_named(header.method, header.slope, tensors)?;
        Ok(Self {
            classifier: PromptedClassifier { method: header.method, prompts, head, readout: header.readout },
            backbone_digest: header.backbone_digest,
            model: header.model,
            task: header.task,
            shots: header.shots,
            split_seed: header.split_seed,
            seed: header.seed,
        })
    }

    /// Fails unless `model` is the backbone these prompts were tuned on.
    pub fn check_backbone(&self, model: &GnnModel) -> Result<()> {
        let digest = model.digest();
        if digest != self.backbone_digest {
            return Err(Error::Compatibility(format!(
                "prompt file was tuned on backbone {} but the checkpoint digest is {digest}",
                self.backbone_digest
            )));
        }
        self.classifier.prompts.check(model)
    }
}

pub fn save_prompt_file(file: &PromptFile, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path, &file.to_bytes()?)
}

pub fn load_prompt_file(path: impl AsRef<Path>) -> Result<PromptFile> {
    PromptFile::from_bytes(&std::fs::read(path)?)
}
