//! GCN and GIN backbones with an edge-prompt injection point in aggregation.
//!
//! A message along CSR entry `i <- j` is `coeff_ij * (h_j + e_ij)`; the self
//! term (GCN self-loop, GIN `(1+ε)·h_i`) never carries a prompt.

mod context;
mod layers;
mod model;

pub use context::GraphContext;
pub use layers::{gcn_layer_forward, gin_layer_forward, prompt_aggregate, LayerPrompt, Linear, LinearVars};
pub use model::{
    classifier_forward, model_forward, readout, EdgePromptBundle, GnnModel, Layer, ModelKind, ModelVars, Readout,
};
