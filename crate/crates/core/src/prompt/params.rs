use rand::Rng;

use crate::error::{Error, Result};
use crate::gnn::{EdgePromptBundle, GnnModel, GraphContext, LayerPrompt};
use crate::graph::Graph;
use crate::tensor::{Tape, Tensor, Var};

/// One shared prompt row per layer, added to every edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePromptParams {
    /// `1 x D_{l-1}` for layer `l`.
    pub layers: Vec<Tensor>,
}

impl EdgePromptParams {
    pub fn zeros(model: &GnnModel) -> Self {
        let dims = model.dims();
        Self { layers: dims[..model.num_layers()].iter().map(|&d| Tensor::zeros(1, d)).collect() }
    }

    pub fn check(&self, model: &GnnModel) -> Result<()> {
        let dims = model.dims();
        if self.layers.len() != model.num_layers() {
            return Err(Error::shape(format!("{} prompt layers for a {}-layer model", self.layers.len(), model.num_layers())));
        }
        for (l, p) in self.layers.iter().enumerate() {
            p.expect_shape((1, dims[l]), &format!("edge prompt of layer {l}"))?;
        }
        Ok(())
    }
}

/// Per-layer anchor prompts mixed per edge by attention scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePromptPlusParams {
    /// `M_l x D_{l-1}` anchors.
    pub anchors: Vec<Tensor>,
    /// `2·D_{l-1} x M_l` score weights.
    pub score_weights: Vec<Tensor>,
    pub slope: f64,
}

impl EdgePromptPlusParams {
    /// Zero anchors and score weights uniform in `[-0.1, 0.1]`.
    pub fn init<R: Rng + ?Sized>(model: &GnnModel, anchors: usize, slope: f64, rng: &mut R) -> Result<Self> {
        if anchors == 0 {
            return Err(Error::Config("EdgePrompt+ needs at least one anchor per layer".into()));
        }
        let dims = model.dims();
        let dims = &dims[..model.num_layers()];
        Ok(Self {
            anchors: dims.iter().map(|&d| Tensor::zeros(anchors, d)).collect(),
            score_weights: dims.iter().map(|&d| Tensor::uniform(2 * d, anchors, -0.1, 0.1, rng)).collect(),
            slope,
        })
    }

    pub fn check(&self, model: &GnnModel) -> Result<()> {
        let dims = model.dims();
        if self.anchors.len() != model.num_layers() || self.score_weights.len() != model.num_layers() {
            return Err(Error::shape(format!("anchor layers do not match a {}-layer model", model.num_layers())));
        }
        for l in 0..model.num_layers() {
            let m = self.anchors[l].rows();
            if m == 0 {
                return Err(Error::shape(format!("layer {l} has no anchors")));
            }
            self.anchors[l].expect_shape((m, dims[l]), &format!("anchors of layer {l}"))?;
            self.score_weights[l].expect_shape((2 * dims[l], m), &format!("score weights of layer {l}"))?;
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!("leaky-relu slope {} outside (0, 1)", self.slope)));
        }
        Ok(())
    }
}

/// Prompts added to node features before the backbone.
#[derive(Clone, Debug, PartialEq)]
pub enum NodePromptParams {
    /// `X + 1·p`.
    Gpf { prompt: Tensor },
    /// `X + softmax(X·S)·B` with basis `B: M x D` and score map `S: D x M`.
    GpfPlus { basis: Tensor, score: Tensor },
}

impl NodePromptParams {
    pub fn check(&self, dim: usize) -> Result<()> {
        match self {
            NodePromptParams::Gpf { prompt } => prompt.expect_shape((1, dim), "feature prompt"),
            NodePromptParams::GpfPlus { basis, score } => {
                let m = basis.rows();
                basis.expect_shape((m, dim), "feature prompt basis")?;
                score.expect_shape((dim, m), "feature prompt score map")
            }
        }
    }
}

/// Every layer's rows equal that layer's shared prompt.
pub fn materialize_edgeprompt(params: &EdgePromptParams, model: &GnnModel, g: &Graph) -> Result<EdgePromptBundle> {
    params.check(model)?;
    let layers = params
        .layers
        .iter()
        .map(|p| {
            let rows: Vec<&Tensor> = vec![p; g.num_entries()];
            if rows.is_empty() {
                Ok(Tensor::zeros(0, p.cols()))
            } else {
                Tensor::concat_rows(&rows)
            }
        })
        .collect::<Result<_>>()?;
    Ok(EdgePromptBundle { layers })
}

fn score_halves<'t>(h: &Var<'t>, w: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let d = h.shape().1;
    if w.shape().0 != 2 * d {
        return Err(Error::shape(format!("score weights have {} rows for representations of width {d}", w.shape().0)));
    }
    Ok((h.matmul(&w.slice_rows(0, d)?)?, h.matmul(&w.slice_rows(d, 2 * d)?)?))
}

/// `softmax(LeakyReLU([h_i || h_j]·W))` for every CSR entry `(i, j)`.
///
/// `[h_i || h_j]·W` is evaluated as `h_i·W_top + h_j·W_bottom` so that the
/// `E x 2D` concatenation is never built.
pub fn score_vars<'t>(ctx: &GraphContext, h: &Var<'t>, w: &Var<'t>, slope: f64) -> Result<Var<'t>> {
    let (top, bottom) = score_halves(h, w)?;
    let logits = top.gather_rows(ctx.entry_rows.clone())?.add(&bottom.gather_rows(ctx.entry_cols.clone())?)?;
    logits.leaky_relu(slope)?.softmax_rows()
}

fn layer_check(params: &EdgePromptPlusParams, model: &GnnModel, h_prev: &Tensor, g: &Graph, layer: usize) -> Result<()> {
    params.check(model)?;
    if layer >= model.num_layers() {
        return Err(Error::Index(format!("layer {layer} of a {}-layer model", model.num_layers())));
    }
    h_prev.expect_shape((g.num_nodes(), model.dims()[layer]), "layer input")
}

/// Score rows of `layer` for representations `h_prev` entering it.
pub fn score_vectors(params: &EdgePromptPlusParams, model: &GnnModel, h_prev: &Tensor, g: &Graph, layer: usize) -> Result<Tensor> {
    layer_check(params, model, h_prev, g, layer)?;
    let tape = Tape::new();
    let ctx = model.context(g);
    let s = score_vars(&ctx, &tape.constant(h_prev.clone()), &tape.constant(params.score_weights[layer].clone()), params.slope)?;
    let v = s.value();
    Ok((*v).clone())
}

/// Per-entry prompts `Σ_m b_ijm · p_m` of `layer`.
pub fn materialize_edgeprompt_plus(
    params: &EdgePromptPlusParams,
    model: &GnnModel,
    h_prev: &Tensor,
    g: &Graph,
    layer: usize,
) -> Result<Tensor> {
    score_vectors(params, model, h_prev, g, layer)?.matmul(&params.anchors[layer])
}

pub(crate) fn node_prompt_vars<'t>(x: &Var<'t>, prompt: &NodePromptVars<'t>) -> Result<Var<'t>> {
    match prompt {
        NodePromptVars::Gpf(p) => x.add(p),
        NodePromptVars::GpfPlus { basis, score } => x.add(&x.matmul(score)?.softmax_rows()?.matmul(basis)?),
    }
}

pub fn apply_node_prompt(params: &NodePromptParams, x: &Tensor) -> Result<Tensor> {
    params.check(x.cols())?;
    let tape = Tape::new();
    let vars = match params {
        NodePromptParams::Gpf { prompt } => NodePromptVars::Gpf(tape.constant(prompt.clone())),
        NodePromptParams::GpfPlus { basis, score } => {
            NodePromptVars::GpfPlus { basis: tape.constant(basis.clone()), score: tape.constant(score.clone()) }
        }
    };
    let out = node_prompt_vars(&tape.constant(x.clone()), &vars)?.value();
    Ok((*out).clone())
}

#[derive(Clone, Copy)]
pub(crate) enum NodePromptVars<'t> {
    Gpf(Var<'t>),
    GpfPlus { basis: Var<'t>, score: Var<'t> },
}

/// Prompt parameters of any method, recorded on a tape.
#[derive(Clone)]
pub(crate) enum PromptVars<'t> {
    None,
    Edge(Vec<Var<'t>>),
    EdgePlus { anchors: Vec<Var<'t>>, weights: Vec<Var<'t>>, slope: f64 },
    Node(NodePromptVars<'t>),
}

impl<'t> PromptVars<'t> {
    pub(crate) fn layer_prompt(&self, l: usize, h: Var<'t>) -> Result<LayerPrompt<'t>> {
        Ok(match self {
            PromptVars::Edge(ps) => LayerPrompt::Shared(ps[l]),
            PromptVars::EdgePlus { anchors, weights, slope } => {
                let (top, bottom) = score_halves(&h, &weights[l])?;
                LayerPrompt::Scored { top, bottom, slope: *slope, anchors: anchors[l] }
            }
            PromptVars::None | PromptVars::Node(_) => LayerPrompt::None,
        })
    }
}
