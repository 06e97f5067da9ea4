use rand::Rng;

use super::GraphContext;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Affine map `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if bias.shape() != (1, weight.cols()) {
            return Err(Error::shape(format!(
                "bias {}x{} does not fit weight {}x{}",
                bias.rows(),
                bias.cols(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self { weight: Tensor::glorot(fan_in, fan_out, rng), bias: Tensor::zeros(1, fan_out) }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Tensor::zeros(fan_in, fan_out), bias: Tensor::zeros(1, fan_out) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn attach<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> LinearVars<'t, T> {
        let leaf = |t: &Tensor<T>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        LinearVars { weight: leaf(&self.weight), bias: leaf(&self.bias) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars<'t, T: Scalar = f64> {
    pub weight: Var<'t, T>,
    pub bias: Var<'t, T>,
}

impl<'t, T: Scalar> LinearVars<'t, T> {
    pub fn forward(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

/// Edge prompts entering one layer.
#[derive(Clone, Copy, Debug)]
pub enum LayerPrompt<'t, T: Scalar = f64> {
    None,
    /// One prompt row per CSR entry, `E x D`.
    PerEntry(Var<'t, T>),
    /// A single row shared by every entry, `1 x D`.
    Shared(Var<'t, T>),
    /// Per-entry convex weights `E x M` over anchor rows `M x D`.
    Mixture { scores: Var<'t, T>, anchors: Var<'t, T> },
    /// Mixture whose scores are `softmax(leaky(top_i + bottom_j))`, from
    /// per-node halves `N x M`; scores are never stored per entry.
    Scored { top: Var<'t, T>, bottom: Var<'t, T>, slope: T, anchors: Var<'t, T> },
}

/// `Σ_j coeff_ij · e_ij` for every node, or `None` when there is no prompt.
///
/// The shared and mixture forms never materialise `E x D` rows.
pub fn prompt_aggregate<'t, T: Scalar>(
    ctx: &GraphContext<T>,
    prompt: &LayerPrompt<'t, T>,
    width: usize,
) -> Result<Option<Var<'t, T>>> {
    let e = ctx.num_entries();
    let check_width = |v: &Var<'t, T>, what: &str| -> Result<()> {
        if v.shape().1 != width {
            return Err(Error::shape(format!("{what} width {} but layer input width {width}", v.shape().1)));
        }
        Ok(())
    };
    match prompt {
        LayerPrompt::None => Ok(None),
        LayerPrompt::PerEntry(rows) => {
            check_width(rows, "edge prompt")?;
            if rows.shape().0 != e {
                return Err(Error::shape(format!("{} prompt rows for {e} CSR entries", rows.shape().0)));
            }
            let coeffs = rows.tape().constant(ctx.edge_coeffs.clone());
            Ok(Some(rows.mul(&coeffs)?.scatter_add_rows(ctx.entry_rows.clone(), ctx.num_nodes)?))
        }
        LayerPrompt::Shared(p) => {
            check_width(p, "shared prompt")?;
            if p.shape().0 != 1 {
                return Err(Error::shape(format!("shared prompt must be one row, got {}", p.shape().0)));
            }
            let sums = p.tape().constant(ctx.coeff_row_sums.clone());
            Ok(Some(sums.matmul(p)?))
        }
        LayerPrompt::Mixture { scores, anchors } => {
            check_width(anchors, "anchor prompts")?;
            let (rows, m) = scores.shape();
            if rows != e || m != anchors.shape().0 {
                return Err(Error::shape(format!(
                    "scores {rows}x{m} do not fit {e} entries and {} anchors",
                    anchors.shape().0
                )));
            }
            let coeffs = scores.tape().constant(ctx.edge_coeffs.clone());
            let weights = scores.mul(&coeffs)?.scatter_add_rows(ctx.entry_rows.clone(), ctx.num_nodes)?;
            Ok(Some(weights.matmul(anchors)?))
        }
        LayerPrompt::Scored { top, bottom, slope, anchors } => {
            check_width(anchors, "anchor prompts")?;
            if top.shape().1 != anchors.shape().0 {
                return Err(Error::shape(format!(
                    "{} score columns for {} anchors",
                    top.shape().1,
                    anchors.shape().0
                )));
            }
            let weights = top.edge_softmax_aggregate(bottom, &ctx.entries, *slope)?;
            Ok(Some(weights.matmul(anchors)?))
        }
    }
}

fn aggregate<'t, T: Scalar>(ctx: &GraphContext<T>, h: Var<'t, T>, prompt: &LayerPrompt<'t, T>) -> Result<Var<'t, T>> {
    let agg = h.tape().spmm(&ctx.operator, h)?;
    match prompt_aggregate(ctx, prompt, h.shape().1)? {
        Some(extra) => agg.add(&extra),
        None => Ok(agg),
    }
}

/// `(Â·H + Σ coeff·e)·W + b`, then ReLU if requested.
pub fn gcn_layer_forward<'t, T: Scalar>(
    ctx: &GraphContext<T>,
    linear: &LinearVars<'t, T>,
    h: Var<'t, T>,
    prompt: &LayerPrompt<'t, T>,
    relu: bool,
) -> Result<Var<'t, T>> {
    let out = linear.forward(&aggregate(ctx, h, prompt)?)?;
    Ok(if relu { out.relu() } else { out })
}

/// `MLP((A + (1+ε)I)·H + Σ e)`, ReLU between MLP linears and optionally after.
pub fn gin_layer_forward<'t, T: Scalar>(
    ctx: &GraphContext<T>,
    mlp: &[LinearVars<'t, T>],
    h: Var<'t, T>,
    prompt: &LayerPrompt<'t, T>,
    relu: bool,
) -> Result<Var<'t, T>> {
    let mut z = aggregate(ctx, h, prompt)?;
    for (k, lin) in mlp.iter().enumerate() {
        z = lin.forward(&z)?;
        if k + 1 < mlp.len() {
            z = z.relu();
        }
    }
    Ok(if relu { z.relu() } else { z })
}
