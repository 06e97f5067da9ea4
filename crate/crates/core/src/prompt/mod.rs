//! Edge and node-feature prompts, frozen-backbone tuning, and evaluation.

mod artifact;
mod params;
mod tune;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use artifact::{load_prompt_file, save_prompt_file, PromptFile, PROMPT_MAGIC, PROMPT_VERSION};
pub use params::{
    apply_node_prompt, materialize_edgeprompt, materialize_edgeprompt_plus, score_vars, score_vectors, EdgePromptParams,
    EdgePromptPlusParams, NodePromptParams,
};
pub use tune::{
    evaluate_accuracy, prompted_representations, tune, tuning_loss_gradient_errors, tune_graph_classification, tune_node_classification, EpochStats, PromptedClassifier,
    TuneConfig, Tuned,
};

use params::{NodePromptVars, PromptVars};

use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "edgeprompt")]
    EdgePrompt,
    #[serde(rename = "edgeprompt+")]
    EdgePromptPlus,
    #[serde(rename = "gpf")]
    Gpf,
    #[serde(rename = "gpf-plus")]
    GpfPlus,
    #[serde(rename = "classifier-only")]
    ClassifierOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::EdgePrompt, Method::EdgePromptPlus, Method::Gpf, Method::GpfPlus, Method::ClassifierOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::EdgePrompt => "edgeprompt",
            Method::EdgePromptPlus => "edgeprompt+",
            Method::Gpf => "gpf",
            Method::GpfPlus => "gpf-plus",
            Method::ClassifierOnly => "classifier-only",
        }
    }

    /// Whether the number of anchors (or basis vectors) matters.
    pub fn uses_anchors(self) -> bool {
        matches!(self, Method::EdgePromptPlus | Method::GpfPlus)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown method '{s}' (expected edgeprompt, edgeprompt+, gpf, gpf-plus or classifier-only)"))
        })
    }
}

/// Learnable prompt parameters of one method.
#[derive(Clone, Debug, PartialEq)]
pub enum PromptParams {
    None,
    Edge(EdgePromptParams),
    EdgePlus(EdgePromptPlusParams),
    Node(NodePromptParams),
}

impl PromptParams {
    /// Zero prompts; score maps uniform in `[-0.1, 0.1]`.
    pub fn init<R: Rng + ?Sized>(method: Method, model: &GnnModel, anchors: usize, slope: f64, rng: &mut R) -> Result<Self> {
        let d = model.dims()[0];
        Ok(match method {
            Method::ClassifierOnly => PromptParams::None,
            Method::EdgePrompt => PromptParams::Edge(EdgePromptParams::zeros(model)),
            Method::EdgePromptPlus => PromptParams::EdgePlus(EdgePromptPlusParams::init(model, anchors, slope, rng)?),
            Method::Gpf => PromptParams::Node(NodePromptParams::Gpf { prompt: Tensor::zeros(1, d) }),
            Method::GpfPlus => {
                if anchors == 0 {
                    return Err(Error::Config("GPF-plus needs at least one basis vector".into()));
                }
                PromptParams::Node(NodePromptParams::GpfPlus {
                    basis: Tensor::zeros(anchors, d),
                    score: Tensor::uniform(d, anchors, -0.1, 0.1, rng),
                })
            }
        })
    }

    pub fn method(&self) -> Option<Method> {
        match self {
            PromptParams::None => Some(Method::ClassifierOnly),
            PromptParams::Edge(_) => Some(Method::EdgePrompt),
            PromptParams::EdgePlus(_) => Some(Method::EdgePromptPlus),
            PromptParams::Node(NodePromptParams::Gpf { .. }) => Some(Method::Gpf),
            PromptParams::Node(NodePromptParams::GpfPlus { .. }) => Some(Method::GpfPlus),
        }
    }

    pub fn check(&self, model: &GnnModel) -> Result<()> {
        match self {
            PromptParams::None => Ok(()),
            PromptParams::Edge(p) => p.check(model),
            PromptParams::EdgePlus(p) => p.check(model),
            PromptParams::Node(p) => p.check(model.dims()[0]),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            PromptParams::None => Vec::new(),
            PromptParams::Edge(p) => p.layers.iter().enumerate().map(|(l, t)| (format!("edge.{l}.prompt"), t)).collect(),
            PromptParams::EdgePlus(p) => p
                .anchors
                .iter()
                .zip(&p.score_weights)
                .enumerate()
                .flat_map(|(l, (a, w))| [(format!("edgeplus.{l}.anchors"), a), (format!("edgeplus.{l}.score"), w)])
                .collect(),
            PromptParams::Node(NodePromptParams::Gpf { prompt }) => vec![("gpf.prompt".into(), prompt)],
            PromptParams::Node(NodePromptParams::GpfPlus { basis, score }) => {
                vec![("gpfplus.basis".into(), basis), ("gpfplus.score".into(), score)]
            }
        }
    }

    /// Same order as [`PromptParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            PromptParams::None => Vec::new(),
            PromptParams::Edge(p) => p.layers.iter_mut().collect(),
            PromptParams::EdgePlus(p) => p.anchors.iter_mut().zip(p.score_weights.iter_mut()).flat_map(|(a, w)| [a, w]).collect(),
            PromptParams::Node(NodePromptParams::Gpf { prompt }) => vec![prompt],
            PromptParams::Node(NodePromptParams::GpfPlus { basis, score }) => vec![basis, score],
        }
    }

    /// Rebuilds parameters from named tensors; every name must be consumed.
    pub fn from_named(method: Method, slope: Option<f64>, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut take = |name: &str| tensors.remove(name).ok_or_else(|| Error::Format(format!("missing prompt tensor '{name}'")));
        let out = match method {
            Method::ClassifierOnly => PromptParams::None,
            Method::EdgePrompt => {
                let mut layers = Vec::new();
                while let Ok(t) = take(&format!("edge.{}.prompt", layers.len())) {
                    layers.push(t);
                }
                PromptParams::Edge(EdgePromptParams { layers })
            }
            Method::EdgePromptPlus => {
                let (mut anchors, mut score_weights) = (Vec::new(), Vec::new());
                while let Ok(a) = take(&format!("edgeplus.{}.anchors", anchors.len())) {
                    score_weights.push(take(&format!("edgeplus.{}.score", anchors.len()))?);
                    anchors.push(a);
                }
                let slope = slope.ok_or_else(|| Error::Format("EdgePrompt+ prompts need a slope".into()))?;
                PromptParams::EdgePlus(EdgePromptPlusParams { anchors, score_weights, slope })
            }
            Method::Gpf => PromptParams::Node(NodePromptParams::Gpf { prompt: take("gpf.prompt")? }),
            Method::GpfPlus => PromptParams::Node(NodePromptParams::GpfPlus { basis: take("gpfplus.basis")?, score: take("gpfplus.score")? }),
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected prompt tensor '{extra}' for method {method}")));
        }
        Ok(out)
    }

    pub(crate) fn attach<'t>(&self, tape: &'t Tape, trainable: bool) -> PromptVars<'t> {
        let put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        match self {
            PromptParams::None => PromptVars::None,
            PromptParams::Edge(p) => PromptVars::Edge(p.layers.iter().map(put).collect()),
            PromptParams::EdgePlus(p) => PromptVars::EdgePlus {
                anchors: p.anchors.iter().map(put).collect(),
                weights: p.score_weights.iter().map(put).collect(),
                slope: p.slope,
            },
            PromptParams::Node(NodePromptParams::Gpf { prompt }) => PromptVars::Node(NodePromptVars::Gpf(put(prompt))),
            PromptParams::Node(NodePromptParams::GpfPlus { basis, score }) => {
                PromptVars::Node(NodePromptVars::GpfPlus { basis: put(basis), score: put(score) })
            }
        }
    }
}

impl PromptParams {
    /// Inverse of [`PromptVars::leaves`]: rebuilds tape handles of this
    /// method's shape from leaves listed in tensor order.
    pub(crate) fn wrap<'t>(&self, leaves: &[Var<'t>]) -> Result<PromptVars<'t>> {
        let want = self.named_tensors().len();
        if leaves.len() != want {
            return Err(Error::shape(format!("{} prompt leaves for {want} prompt tensors", leaves.len())));
        }
        Ok(match self {
            PromptParams::None => PromptVars::None,
            PromptParams::Edge(_) => PromptVars::Edge(leaves.to_vec()),
            PromptParams::EdgePlus(p) => PromptVars::EdgePlus {
                anchors: leaves.iter().step_by(2).copied().collect(),
                weights: leaves.iter().skip(1).step_by(2).copied().collect(),
                slope: p.slope,
            },
            PromptParams::Node(NodePromptParams::Gpf { .. }) => PromptVars::Node(NodePromptVars::Gpf(leaves[0])),
            PromptParams::Node(NodePromptParams::GpfPlus { .. }) => {
                PromptVars::Node(NodePromptVars::GpfPlus { basis: leaves[0], score: leaves[1] })
            }
        })
    }
}

impl<'t> PromptVars<'t> {
    /// Leaves in the order of [`PromptParams::tensors_mut`].
    pub(crate) fn leaves(&self) -> Vec<Var<'t>> {
        match self {
            PromptVars::None => Vec::new(),
            PromptVars::Edge(ps) => ps.clone(),
            PromptVars::EdgePlus { anchors, weights, .. } => anchors.iter().zip(weights).flat_map(|(&a, &w)| [a, w]).collect(),
            PromptVars::Node(NodePromptVars::Gpf(p)) => vec![*p],
            PromptVars::Node(NodePromptVars::GpfPlus { basis, score }) => vec![*basis, *score],
        }
    }
}
