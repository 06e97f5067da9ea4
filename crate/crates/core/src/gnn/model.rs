use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{gcn_layer_forward, gin_layer_forward, LayerPrompt, Linear, LinearVars};
use super::GraphContext;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Gin,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gin => "gin",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "gin" => Ok(ModelKind::Gin),
            other => Err(Error::Config(format!("unknown backbone '{other}' (expected gcn or gin)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f64> {
    Gcn { linear: Linear<T>, relu: bool },
    Gin { epsilon: T, mlp: Vec<Linear<T>>, relu: bool },
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Gcn { linear, .. } => linear.in_dim(),
            Layer::Gin { mlp, .. } => mlp[0].in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Gcn { linear, .. } => linear.out_dim(),
            Layer::Gin { mlp, .. } => mlp[mlp.len() - 1].out_dim(),
        }
    }

    fn linears(&self) -> Vec<&Linear<T>> {
        match self {
            Layer::Gcn { linear, .. } => vec![linear],
            Layer::Gin { mlp, .. } => mlp.iter().collect(),
        }
    }
}

/// An `L`-layer message-passing network.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel<T = f64> {
    kind: ModelKind,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> GnnModel<T> {
    /// Glorot-initialised model with widths `dims[0] -> ... -> dims[L]`.
    ///
    /// GCN layers are single affine maps; GIN layers use a Linear-ReLU-Linear
    /// MLP and `ε = 0`. ReLU follows every layer except the last.
    pub fn new<R: Rng + ?Sized>(kind: ModelKind, dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        let num_layers = dims.len() - 1;
        let layers = (0..num_layers)
            .map(|l| {
                let relu = l + 1 < num_layers;
                match kind {
                    ModelKind::Gcn => Layer::Gcn { linear: Linear::glorot(dims[l], dims[l + 1], rng), relu },
                    ModelKind::Gin => Layer::Gin {
                        epsilon: T::zero(),
                        mlp: vec![Linear::glorot(dims[l], dims[l + 1], rng), Linear::glorot(dims[l + 1], dims[l + 1], rng)],
                        relu,
                    },
                }
            })
            .collect();
        Ok(Self { kind, layers })
    }

    pub fn from_layers(kind: ModelKind, layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            let matches = matches!((kind, layer), (ModelKind::Gcn, Layer::Gcn { .. }) | (ModelKind::Gin, Layer::Gin { .. }));
            if !matches {
                return Err(Error::Config(format!("layer {l} does not match model kind {kind}")));
            }
            if let Layer::Gin { mlp, .. } = layer {
                if mlp.is_empty() || mlp.windows(2).any(|w| w[0].out_dim() != w[1].in_dim()) {
                    return Err(Error::shape(format!("layer {l}: MLP widths do not chain")));
                }
            }
            if l > 0 && layers[l - 1].out_dim() != layer.in_dim() {
                return Err(Error::shape(format!(
                    "layer {l} expects width {} but layer {} produces {}",
                    layer.in_dim(),
                    l - 1,
                    layers[l - 1].out_dim()
                )));
            }
        }
        Ok(Self { kind, layers })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Widths `D_0..D_L`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn gin_epsilon(&self) -> T {
        match self.layers.first() {
            Some(Layer::Gin { epsilon, .. }) => *epsilon,
            _ => T::zero(),
        }
    }

    /// Parameter tensors in a fixed order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Gcn { linear, .. } => {
                    out.push((format!("layers.{l}.weight"), &linear.weight));
                    out.push((format!("layers.{l}.bias"), &linear.bias));
                }
                Layer::Gin { mlp, .. } => {
                    for (k, lin) in mlp.iter().enumerate() {
                        out.push((format!("layers.{l}.mlp.{k}.weight"), &lin.weight));
                        out.push((format!("layers.{l}.mlp.{k}.bias"), &lin.bias));
                    }
                }
            }
        }
        out
    }

    /// Mutable parameters, same order as [`GnnModel::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Gcn { linear, .. } => {
                    out.push(&mut linear.weight);
                    out.push(&mut linear.bias);
                }
                Layer::Gin { mlp, .. } => {
                    for lin in mlp {
                        out.push(&mut lin.weight);
                        out.push(&mut lin.bias);
                    }
                }
            }
        }
        out
    }

    /// Rebuilds a model from named tensors, checking every name appears
    /// exactly once and shapes chain with `dims`.
    pub fn from_named(kind: ModelKind, dims: &[usize], mut tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Format("model dims must list at least two widths".into()));
        }
        let num_layers = dims.len() - 1;
        let mut take = |name: String, shape: (usize, usize)| -> Result<Tensor<T>> {
            let t = tensors.remove(&name).ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))?;
            if t.shape() != shape {
                return Err(Error::Format(format!(
                    "tensor '{name}' is {}x{}, expected {}x{}",
                    t.rows(),
                    t.cols(),
                    shape.0,
                    shape.1
                )));
            }
            Ok(t)
        };
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let relu = l + 1 < num_layers;
            let (din, dout) = (dims[l], dims[l + 1]);
            match kind {
                ModelKind::Gcn => {
                    let weight = take(format!("layers.{l}.weight"), (din, dout))?;
                    let bias = take(format!("layers.{l}.bias"), (1, dout))?;
                    layers.push(Layer::Gcn { linear: Linear::new(weight, bias)?, relu });
                }
                ModelKind::Gin => {
                    let w0 = take(format!("layers.{l}.mlp.0.weight"), (din, dout))?;
                    let b0 = take(format!("layers.{l}.mlp.0.bias"), (1, dout))?;
                    let w1 = take(format!("layers.{l}.mlp.1.weight"), (dout, dout))?;
                    let b1 = take(format!("layers.{l}.mlp.1.bias"), (1, dout))?;
                    layers.push(Layer::Gin {
                        epsilon: T::zero(),
                        mlp: vec![Linear::new(w0, b0)?, Linear::new(w1, b1)?],
                        relu,
                    });
                }
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor '{extra}' for a {kind} model")));
        }
        Self::from_layers(kind, layers)
    }

    /// SHA-256 over names, shapes, and payload bit patterns.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.named_tensors() {
            hasher.update(name.as_bytes());
            hasher.update((t.rows() as u64).to_le_bytes());
            hasher.update((t.cols() as u64).to_le_bytes());
            for x in t.data() {
                hasher.update(x.to_f64_lossy().to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<U: Scalar>(&self) -> GnnModel<U> {
        let lin = |l: &Linear<T>| Linear { weight: l.weight.cast(), bias: l.bias.cast() };
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Gcn { linear, relu } => Layer::Gcn { linear: lin(linear), relu: *relu },
                Layer::Gin { epsilon, mlp, relu } => Layer::Gin {
                    epsilon: U::of(epsilon.to_f64_lossy()),
                    mlp: mlp.iter().map(lin).collect(),
                    relu: *relu,
                },
            })
            .collect();
        GnnModel { kind: self.kind, layers }
    }

    /// Puts the weights on `tape`, as trainable leaves or as constants.
    pub fn attach<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> ModelVars<'t, T> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Gcn { linear, relu } => LayerVars::Gcn(linear.attach(tape, trainable), *relu),
                Layer::Gin { mlp, relu, .. } => {
                    LayerVars::Gin(mlp.iter().map(|l| l.attach(tape, trainable)).collect(), *relu)
                }
            })
            .collect();
        ModelVars { layers }
    }

    pub fn context(&self, g: &Graph<T>) -> GraphContext<T> {
        GraphContext::new(g, self.kind, self.gin_epsilon())
    }

    pub fn check_input(&self, g: &Graph<T>) -> Result<()> {
        if g.feature_dim() != self.layers[0].in_dim() {
            return Err(Error::shape(format!(
                "graph features have width {} but the model expects {}",
                g.feature_dim(),
                self.layers[0].in_dim()
            )));
        }
        Ok(())
    }

    /// Number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.layers.iter().flat_map(|l| l.linears()).map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

enum LayerVars<'t, T: Scalar> {
    Gcn(LinearVars<'t, T>, bool),
    Gin(Vec<LinearVars<'t, T>>, bool),
}

/// A model's weights recorded on one tape.
pub struct ModelVars<'t, T: Scalar = f64> {
    layers: Vec<LayerVars<'t, T>>,
}

impl<'t, T: Scalar> ModelVars<'t, T> {
    /// Leaves in the order of [`GnnModel::named_tensors`].
    pub fn params(&self) -> Vec<Var<'t, T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerVars::Gcn(lin, _) => out.extend([lin.weight, lin.bias]),
                LayerVars::Gin(mlp, _) => {
                    for lin in mlp {
                        out.extend([lin.weight, lin.bias]);
                    }
                }
            }
        }
        out
    }

    /// Runs every layer. `prompt_for(l, h)` receives the representation
    /// entering layer `l` (zero-based) and returns that layer's edge prompt.
    pub fn forward<F>(&self, ctx: &GraphContext<T>, x: Var<'t, T>, mut prompt_for: F) -> Result<Var<'t, T>>
    where
        F: FnMut(usize, Var<'t, T>) -> Result<LayerPrompt<'t, T>>,
    {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let prompt = prompt_for(l, h)?;
            h = match layer {
                LayerVars::Gcn(lin, relu) => gcn_layer_forward(ctx, lin, h, &prompt, *relu)?,
                LayerVars::Gin(mlp, relu) => gin_layer_forward(ctx, mlp, h, &prompt, *relu)?,
            };
        }
        Ok(h)
    }

    pub fn forward_plain(&self, ctx: &GraphContext<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.forward(ctx, x, |_, _| Ok(LayerPrompt::None))
    }
}

/// Materialised per-entry prompt rows for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePromptBundle<T = f64> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> EdgePromptBundle<T> {
    pub fn zeros(model: &GnnModel<T>, g: &Graph<T>) -> Self {
        let dims = model.dims();
        Self { layers: (0..model.num_layers()).map(|l| Tensor::zeros(g.num_entries(), dims[l])).collect() }
    }
}

/// Untracked forward pass of a frozen model, optionally with materialised prompts.
pub fn model_forward<T: Scalar>(model: &GnnModel<T>, g: &Graph<T>, prompts: Option<&EdgePromptBundle<T>>) -> Result<Tensor<T>> {
    model.check_input(g)?;
    if let Some(bundle) = prompts {
        if bundle.layers.len() != model.num_layers() {
            return Err(Error::shape(format!(
                "prompt bundle has {} layers for a {}-layer model",
                bundle.layers.len(),
                model.num_layers()
            )));
        }
    }
    let ctx = model.context(g);
    let tape = Tape::new();
    let vars = model.attach(&tape, false);
    let x = tape.constant(g.features().clone());
    let out = vars.forward(&ctx, x, |l, _| {
        Ok(match prompts {
            Some(bundle) => LayerPrompt::PerEntry(tape.constant(bundle.layers[l].clone())),
            None => LayerPrompt::None,
        })
    })?;
    let value = out.value();
    Ok((*value).clone())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Sum,
    Mean,
}

impl std::str::FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Readout::Sum),
            "mean" => Ok(Readout::Mean),
            other => Err(Error::Config(format!("unknown readout '{other}' (expected sum or mean)"))),
        }
    }
}

/// Per-graph pooling of node rows. `membership[i]` is node `i`'s graph.
pub fn readout<'t, T: Scalar>(h: Var<'t, T>, membership: &Rc<[usize]>, num_graphs: usize, kind: Readout) -> Result<Var<'t, T>> {
    if membership.len() != h.shape().0 {
        return Err(Error::shape(format!(
            "membership covers {} nodes but representations have {} rows",
            membership.len(),
            h.shape().0
        )));
    }
    match kind {
        Readout::Sum => h.scatter_add_rows(Rc::clone(membership), num_graphs),
        Readout::Mean => {
            let mut counts = vec![0usize; num_graphs];
            for &g in membership.iter() {
                if g >= num_graphs {
                    return Err(Error::Index(format!("membership {g} out of {num_graphs} graphs")));
                }
                counts[g] += 1;
            }
            let inv: Vec<T> = membership.iter().map(|&g| T::one() / T::of(counts[g] as f64)).collect();
            let scale = h.tape().constant(Tensor::column(&inv));
            h.mul(&scale)?.scatter_add_rows(Rc::clone(membership), num_graphs)
        }
    }
}

/// Linear probe logits; no activation.
pub fn classifier_forward<'t, T: Scalar>(head: &LinearVars<'t, T>, reps: &Var<'t, T>) -> Result<Var<'t, T>> {
    if head.weight.shape().0 != reps.shape().1 {
        return Err(Error::shape(format!(
            "classifier expects width {} but representations have {}",
            head.weight.shape().0,
            reps.shape().1
        )));
    }
    head.forward(reps)
}
