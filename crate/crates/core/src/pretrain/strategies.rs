use std::borrow::Cow;
use std::rc::Rc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::augment::{augment_graph, Augmentation};
use super::checkpoint::{Checkpoint, PretrainMeta};
use super::loss::{ntxent_loss, project, ProjectionHead};
use super::{PretrainConfig, PretrainRun, Strategy};
use crate::error::{Error, Result};
use crate::gnn::{readout, GnnModel, ModelVars};
use crate::graph::{disjoint_union, membership, Graph, LabeledDataset, Task};
use crate::seed::rng_for;
use crate::tensor::{AdamConfig, AdamState, Gradients, Tape, Tensor, Var};

// Stream tags for derived seeds.
const HEAD: u64 = 1;
const ORDER: u64 = 2;
const VIEW: u64 = 3;
const NOISE: u64 = 4;
const MASK: u64 = 5;
const PAIRS: u64 = 6;

/// Runs `cfg.strategy`.
pub fn pretrain(model: GnnModel, ds: &LabeledDataset, cfg: &PretrainConfig) -> Result<PretrainRun> {
    match cfg.strategy {
        Strategy::Graphcl => pretrain_graphcl(model, ds, cfg),
        Strategy::Simgrace => pretrain_simgrace(model, ds, cfg),
        Strategy::EpGppt => pretrain_ep_gppt(model, &*single_graph(ds)?, cfg),
        Strategy::EpGraphprompt => pretrain_ep_graphprompt(model, &*single_graph(ds)?, cfg),
    }
}

fn single_graph(ds: &LabeledDataset) -> Result<Cow<'_, Graph>> {
    if ds.graphs().is_empty() {
        return Err(Error::Config("pre-training needs a non-empty dataset".into()));
    }
    ds.node_graph()
}

fn check(model: &GnnModel, graphs: &[&Graph], cfg: &PretrainConfig, strategy: Strategy) -> Result<()> {
    cfg.validate()?;
    if cfg.strategy != strategy {
        return Err(Error::Config(format!("config names strategy {} but {strategy} was invoked", cfg.strategy)));
    }
    if graphs.is_empty() {
        return Err(Error::Config("pre-training needs a non-empty dataset".into()));
    }
    graphs.iter().try_for_each(|g| model.check_input(g))
}

fn finish(model: GnnModel, cfg: &PretrainConfig, losses: Vec<f64>, masked_edges: Option<usize>) -> PretrainRun {
    let meta = PretrainMeta {
        strategy: cfg.strategy,
        epochs: cfg.epochs,
        seed: cfg.seed,
        final_loss: losses.last().copied(),
        masked_edges,
    };
    PretrainRun { checkpoint: Checkpoint { model, meta }, losses }
}

/// Model (and optional head) parameters with their Adam state.
struct Trainer {
    model: GnnModel,
    head: Option<ProjectionHead>,
    adam: AdamState,
}

impl Trainer {
    fn new(model: GnnModel, with_head: bool, cfg: &PretrainConfig) -> Self {
        let head = with_head.then(|| ProjectionHead::new(model.dims()[model.num_layers()], &mut rng_for(cfg.seed, &[HEAD])));
        let mut refs: Vec<&Tensor> = model.named_tensors().into_iter().map(|(_, t)| t).collect();
        if let Some(h) = &head {
            refs.extend(h.tensors());
        }
        let adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &refs);
        Self { model, head, adam }
    }

    fn step(&mut self, grads: &Gradients, leaves: &[Var<'_>]) -> Result<()> {
        let g: Vec<Tensor> = leaves.iter().map(|v| grads.wrt(v)).collect();
        let mut params = self.model.tensors_mut();
        if let Some(h) = &mut self.head {
            params.extend(h.tensors_mut());
        }
        let refs: Vec<Option<&Tensor>> = g.iter().map(Some).collect();
        self.adam.step(&mut params, &refs)
    }
}

fn leaves<'t>(model: &ModelVars<'t>, head: Option<&[crate::gnn::LinearVars<'t>; 2]>) -> Vec<Var<'t>> {
    let mut out = model.params();
    if let Some(h) = head {
        for l in h {
            out.extend([l.weight, l.bias]);
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn encode_for_tests<'t>(tape: &'t Tape, model: &GnnModel, vars: &ModelVars<'t>, graphs: &[Graph], cfg: &PretrainConfig) -> Var<'t> {
    encode(tape, model, vars, graphs, cfg).unwrap()
}

/// Graph-level representations of `graphs` (one row each).
fn encode<'t>(tape: &'t Tape, model: &GnnModel, vars: &ModelVars<'t>, graphs: &[Graph], cfg: &PretrainConfig) -> Result<Var<'t>> {
    let refs: Vec<&Graph> = graphs.iter().collect();
    let (union, _) = disjoint_union(&refs)?;
    let sizes: Vec<usize> = graphs.iter().map(Graph::num_nodes).collect();
    let member: Rc<[usize]> = membership(&sizes).into();
    let ctx = model.context(&union);
    let h = vars.forward_plain(&ctx, tape.constant(union.features().clone()))?;
    readout(h, &member, graphs.len(), cfg.readout)
}

/// Contrastive batches: graph indices for graph datasets, or `None` per
/// epoch for a single graph contrasted against itself.
fn batches(ds_graphs: usize, single: bool, cfg: &PretrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    if single {
        return vec![vec![0; cfg.view_pairs]];
    }
    let mut order: Vec<usize> = (0..ds_graphs).collect();
    order.shuffle(&mut rng_for(cfg.seed, &[ORDER, epoch as u64]));
    let mut out: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn contrastive_graphs(ds: &LabeledDataset) -> Result<(Vec<Cow<'_, Graph>>, bool)> {
    match ds.task() {
        Task::Node => Ok((vec![single_graph(ds)?], true)),
        Task::Graph => {
            if ds.graphs().len() < 2 {
                return Err(Error::Config("contrastive pre-training needs at least 2 graphs".into()));
            }
            Ok((ds.graphs().iter().map(Cow::Borrowed).collect(), false))
        }
    }
}

/// GraphCL: two randomly augmented views of every graph, contrasted after a
/// projection head. A node-level dataset contributes `view_pairs` view pairs
/// of its single graph per epoch.
pub fn pretrain_graphcl(model: GnnModel, ds: &LabeledDataset, cfg: &PretrainConfig) -> Result<PretrainRun> {
    let (graphs, single) = contrastive_graphs(ds)?;
    let refs: Vec<&Graph> = graphs.iter().map(|g| &**g).collect();
    check(&model, &refs, cfg, Strategy::Graphcl)?;
    let mut tr = Trainer::new(model, true, cfg);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let plan = batches(refs.len(), single, cfg, epoch);
        for (b, batch) in plan.iter().enumerate() {
            let mut views: [Vec<Graph>; 2] = [Vec::new(), Vec::new()];
            for (k, &gi) in batch.iter().enumerate() {
                for (v, out) in views.iter_mut().enumerate() {
                    let mut rng = rng_for(cfg.seed, &[VIEW, epoch as u64, b as u64, k as u64, v as u64]);
                    let kind = if rng.random::<bool>() { Augmentation::NodeDrop } else { Augmentation::EdgePerturb };
                    out.push(augment_graph(refs[gi], kind, cfg.drop_ratio, &mut rng)?);
                }
            }
            let tape = Tape::new();
            let vars = tr.model.attach(&tape, true);
            let head = tr.head.as_ref().expect("graphcl head").attach(&tape);
            let z1 = project(&head, &encode(&tape, &tr.model, &vars, &views[0], cfg)?)?;
            let z2 = project(&head, &encode(&tape, &tr.model, &vars, &views[1], cfg)?)?;
            let loss = ntxent_loss(&z1, &z2, cfg.temperature)?;
            total += loss.value().get(0, 0);
            let grads = tape.backward(&loss)?;
            let leaves = leaves(&vars, Some(&head));
            tr.step(&grads, &leaves)?;
        }
        losses.push(total / plan.len() as f64);
    }
    Ok(finish(tr.model, cfg, losses, None))
}

/// Copy of `model` with Gaussian noise of standard deviation
/// `scale · std(tensor)` added to every tensor.
pub fn perturb_model<R: Rng + ?Sized>(model: &GnnModel, scale: f64, rng: &mut R) -> GnnModel {
    let mut out = model.clone();
    for t in out.tensors_mut() {
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = scale * std;
        for v in t.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
    }
    out
}

/// SimGRACE: the same graphs encoded by the model and by a weight-perturbed
/// copy of it. On a single graph the batch is made of node-dropped views.
pub fn pretrain_simgrace(model: GnnModel, ds: &LabeledDataset, cfg: &PretrainConfig) -> Result<PretrainRun> {
    let (graphs, single) = contrastive_graphs(ds)?;
    let refs: Vec<&Graph> = graphs.iter().map(|g| &**g).collect();
    check(&model, &refs, cfg, Strategy::Simgrace)?;
    let mut tr = Trainer::new(model, true, cfg);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let plan = batches(refs.len(), single, cfg, epoch);
        for (b, batch) in plan.iter().enumerate() {
            let items: Vec<Graph> = if single {
                (0..batch.len())
                    .map(|k| {
                        let mut rng = rng_for(cfg.seed, &[VIEW, epoch as u64, b as u64, k as u64]);
                        augment_graph(refs[0], Augmentation::NodeDrop, cfg.drop_ratio, &mut rng)
                    })
                    .collect::<Result<_>>()?
            } else {
                batch.iter().map(|&gi| refs[gi].clone()).collect()
            };
            let perturbed = perturb_model(&tr.model, cfg.noise_scale, &mut rng_for(cfg.seed, &[NOISE, epoch as u64, b as u64]));
            let tape = Tape::new();
            let vars = tr.model.attach(&tape, true);
            let fixed = perturbed.attach(&tape, false);
            let head = tr.head.as_ref().expect("simgrace head").attach(&tape);
            let z1 = project(&head, &encode(&tape, &tr.model, &vars, &items, cfg)?)?;
            let z2 = project(&head, &encode(&tape, &perturbed, &fixed, &items, cfg)?)?;
            let loss = ntxent_loss(&z1, &z2, cfg.temperature)?;
            total += loss.value().get(0, 0);
            let grads = tape.backward(&loss)?;
            let leaves = leaves(&vars, Some(&head));
            tr.step(&grads, &leaves)?;
        }
        losses.push(total / plan.len() as f64);
    }
    Ok(finish(tr.model, cfg, losses, None))
}

/// Uniform pair `(i, j)` with `i != j` that is not an edge of `g`, if one is found.
fn non_edge<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Option<(usize, usize)> {
    let n = g.num_nodes();
    for _ in 0..1000 {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && !g.has_edge(i, j) {
            return Some((i, j));
        }
    }
    let free: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i != j && !g.has_edge(i, j)).collect();
    (!free.is_empty()).then(|| free[rng.random_range(0..free.len())])
}

/// Non-neighbour of `i`, if `i` has any.
fn non_neighbor<R: Rng + ?Sized>(g: &Graph, i: usize, rng: &mut R) -> Option<usize> {
    let n = g.num_nodes();
    if g.degree(i) + 1 >= n {
        return None;
    }
    loop {
        let j = rng.random_range(0..n);
        if j != i && !g.has_edge(i, j) {
            return Some(j);
        }
    }
}

fn pair_scores<'t>(h: &Var<'t>, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
    let src: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let dst: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
    Ok(h.gather_rows(src)?.mul(&h.gather_rows(dst)?)?.sum_cols())
}

/// Link prediction: `σ(h_i·h_j)` for masked edges against as many sampled
/// non-edges, with the masked edges removed from message passing. With a
/// mask ratio of 0 every edge is both propagated and scored.
pub fn pretrain_ep_gppt(model: GnnModel, g: &Graph, cfg: &PretrainConfig) -> Result<PretrainRun> {
    check(&model, &[g], cfg, Strategy::EpGppt)?;
    let edges = g.undirected_edges();
    if edges.is_empty() {
        return Err(Error::Config("link-prediction pre-training needs a graph with edges".into()));
    }
    let n = g.num_nodes();
    if edges.len() == n * (n - 1) / 2 {
        return Err(Error::Config("graph is complete: no non-edges to sample as negatives".into()));
    }
    let k = (cfg.mask_ratio * edges.len() as f64).floor() as usize;
    let mut masked = vec![false; edges.len()];
    for e in sample(&mut rng_for(cfg.seed, &[MASK]), edges.len(), k) {
        masked[e] = true;
    }
    let (visible, positives): (Vec<(usize, usize)>, Vec<(usize, usize)>) = if k == 0 {
        (edges.clone(), edges.clone())
    } else {
        let vis = edges.iter().zip(&masked).filter(|(_, &m)| !m).map(|(&e, _)| e).collect();
        let pos = edges.iter().zip(&masked).filter(|(_, &m)| m).map(|(&e, _)| e).collect();
        (vis, pos)
    };
    let message_graph = Graph::from_edges(n, &visible, g.features().clone())?.0;
    let ctx = model.context(&message_graph);
    let mut tr = Trainer::new(model, false, cfg);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, &[PAIRS, epoch as u64]);
        let mut pairs = positives.clone();
        for _ in 0..positives.len() {
            pairs.push(non_edge(g, &mut rng).expect("graph is not complete"));
        }
        let targets: Vec<f64> = (0..pairs.len()).map(|i| if i < positives.len() { 1.0 } else { 0.0 }).collect();
        let tape = Tape::new();
        let vars = tr.model.attach(&tape, true);
        let h = vars.forward_plain(&ctx, tape.constant(message_graph.features().clone()))?;
        let loss = pair_scores(&h, &pairs)?.bce_with_logits(targets)?;
        losses.push(loss.value().get(0, 0));
        let grads = tape.backward(&loss)?;
        tr.step(&grads, &leaves(&vars, None))?;
    }
    Ok(finish(tr.model, cfg, losses, Some(k)))
}

/// Neighbour contrast: for every node with both a neighbour and a
/// non-neighbour, a temperature-scaled softmax over the cosine similarity to
/// one sampled neighbour (positive) and one sampled non-neighbour. Other
/// nodes are skipped.
pub fn pretrain_ep_graphprompt(model: GnnModel, g: &Graph, cfg: &PretrainConfig) -> Result<PretrainRun> {
    check(&model, &[g], cfg, Strategy::EpGraphprompt)?;
    let n = g.num_nodes();
    let anchors: Vec<usize> = (0..n).filter(|&i| g.degree(i) > 0 && g.degree(i) + 1 < n).collect();
    let ctx = model.context(g);
    let mut tr = Trainer::new(model, false, cfg);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if anchors.is_empty() {
            losses.push(0.0);
            continue;
        }
        let mut rng = rng_for(cfg.seed, &[PAIRS, epoch as u64]);
        let mut pos = Vec::with_capacity(anchors.len());
        let mut neg = Vec::with_capacity(anchors.len());
        for &a in &anchors {
            let nb = g.neighbors(a);
            pos.push((a, nb[rng.random_range(0..nb.len())]));
            neg.push((a, non_neighbor(g, a, &mut rng).expect("anchor has a non-neighbour")));
        }
        let tape = Tape::new();
        let vars = tr.model.attach(&tape, true);
        let h = vars.forward_plain(&ctx, tape.constant(g.features().clone()))?.l2_normalize_rows(1e-12);
        let logits = tape.concat_cols(&[pair_scores(&h, &pos)?, pair_scores(&h, &neg)?])?.scale(1.0 / cfg.temperature);
        let loss = logits.cross_entropy(vec![0usize; anchors.len()])?;
        losses.push(loss.value().get(0, 0));
        let grads = tape.backward(&loss)?;
        tr.step(&grads, &leaves(&vars, None))?;
    }
    Ok(finish(tr.model, cfg, losses, None))
}
