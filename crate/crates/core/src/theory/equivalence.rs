use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{GnnModel, Layer, Linear, ModelKind};
use crate::graph::Graph;
use crate::prompt::{prompted_representations, EdgePromptParams, NodePromptParams, PromptParams};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Edge-prompt scale `(Deg + N + N·ε) / Deg` that matches a feature prompt
/// under a single linear GIN layer with sum readout. `Deg` counts every
/// endpoint, i.e. twice the number of undirected edges.
pub fn lemma1_coefficient(g: &Graph, epsilon: f64) -> Result<f64> {
    let deg = g.num_entries() as f64;
    if deg == 0.0 {
        return Err(Error::Undefined("graph has no edges: Deg = 0 and the coefficient divides by zero".into()));
    }
    let n = g.num_nodes() as f64;
    Ok((deg + n + n * epsilon) / deg)
}

fn linear_gin(weight: &Tensor, epsilon: f64) -> Result<GnnModel> {
    let linear = Linear::new(weight.clone(), Tensor::zeros(1, weight.cols()))?;
    GnnModel::from_layers(ModelKind::Gin, vec![Layer::Gin { epsilon, mlp: vec![linear], relu: false }])
}

fn column_sums(h: &Tensor) -> Vec<f64> {
    (0..h.cols()).map(|c| (0..h.rows()).map(|r| h.get(r, c)).sum()).collect()
}

/// `‖Sum(H_p̂) − Sum(H_p)‖∞` with the feature prompt `p̂` on every node
/// against the edge prompt `coefficient·p̂` on every edge.
pub fn theorem2_residual(g: &Graph, p_hat: &Tensor, epsilon: f64, weight: &Tensor, coefficient: f64) -> Result<f64> {
    let model = linear_gin(weight, epsilon)?;
    let feature = PromptParams::Node(NodePromptParams::Gpf { prompt: p_hat.clone() });
    let edge = PromptParams::Edge(EdgePromptParams { layers: vec![p_hat.scale(coefficient)] });
    let a = column_sums(&prompted_representations(&model, &feature, g)?);
    let b = column_sums(&prompted_representations(&model, &edge, g)?);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Residual at the coefficient from [`lemma1_coefficient`].
pub fn theorem2_equivalence_check(g: &Graph, p_hat: &Tensor, epsilon: f64, weight: &Tensor) -> Result<f64> {
    theorem2_residual(g, p_hat, epsilon, weight, lemma1_coefficient(g, epsilon)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Params {
    pub max_nodes: usize,
    pub trials: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for Theorem2Params {
    fn default() -> Self {
        Self { max_nodes: 20, trials: 100, feature_dim: 4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub theorem: String,
    pub params: Theorem2Params,
    pub residuals: Vec<f64>,
    /// Residuals with the coefficient scaled by 1.1.
    pub control_residuals: Vec<f64>,
    pub max_residual: f64,
    pub min_control_residual: f64,
    pub pass: bool,
}

pub const THEOREM2_TOLERANCE: f64 = 1e-9;
pub const CONTROL_FLOOR: f64 = 1e-3;

/// Random graphs with 2 to `max_nodes` nodes (at least one edge), random
/// prompts and weights, `ε` alternating between 0 and 0.5.
pub fn theorem2_trials(params: &Theorem2Params) -> Result<Theorem2Report> {
    if params.max_nodes < 2 || params.trials == 0 || params.feature_dim == 0 {
        return Err(Error::Config("theorem 2 trials need max_nodes >= 2, trials >= 1 and feature_dim >= 1".into()));
    }
    let d = params.feature_dim;
    let (mut residuals, mut control) = (Vec::new(), Vec::new());
    for t in 0..params.trials {
        let mut rng = rng_for(params.seed, &[t as u64]);
        let n = rng.random_range(2..=params.max_nodes);
        let density = rng.random_range(0.1..0.9);
        let mut edges: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.random::<f64>() < density).collect();
        if edges.is_empty() {
            let i = rng.random_range(0..n - 1);
            edges.push((i, i + 1));
        }
        let x = Tensor::uniform(n, d, -1.0, 1.0, &mut rng);
        let (g, _) = Graph::from_edges(n, &edges, x)?;
        let p_hat = Tensor::uniform(1, d, -1.0, 1.0, &mut rng);
        let weight = Tensor::uniform(d, d, -1.0, 1.0, &mut rng);
        let eps = if t % 2 == 0 { 0.0 } else { 0.5 };
        let coef = lemma1_coefficient(&g, eps)?;
        residuals.push(theorem2_residual(&g, &p_hat, eps, &weight, coef)?);
        control.push(theorem2_residual(&g, &p_hat, eps, &weight, 1.1 * coef)?);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let min_control_residual = control.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Theorem2Report {
        theorem: "theorem2".into(),
        params: params.clone(),
        pass: max_residual < THEOREM2_TOLERANCE && min_control_residual > CONTROL_FLOOR,
        residuals,
        control_residuals: control,
        max_residual,
        min_control_residual,
    })
}
