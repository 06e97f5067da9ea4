use std::rc::Rc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::params::{node_prompt_vars, PromptVars};
use super::{Method, PromptParams};
use crate::error::{Error, Result};
use crate::gnn::{readout, GnnModel, GraphContext, Linear, ModelVars, Readout};
use crate::graph::{disjoint_union, membership, FewShotSplit, Graph, LabeledDataset, Task};
use crate::seed::rng_for;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

const HEAD: u64 = 1;
const PROMPT: u64 = 2;
const ORDER: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Graphs per update for graph classification; node classification is full-batch.
    pub batch_size: usize,
    /// Anchors per layer (EdgePrompt+) or basis vectors (GPF-plus).
    pub anchors: usize,
    pub readout: Readout,
    pub slope: f64,
    pub seed: u64,
}

impl TuneConfig {
    /// Defaults for a task: 10 anchors for nodes, 5 for graphs.
    pub fn for_task(task: Task) -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 32,
            anchors: match task {
                Task::Node => 10,
                Task::Graph => 5,
            },
            readout: Readout::Sum,
            slope: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.anchors == 0 {
            return Err(Error::Config("epochs, batch_size and anchors must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!("slope must lie in (0, 1), got {}", self.slope)));
        }
        Ok(())
    }
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self::for_task(Task::Node)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub train_acc: f64,
}

/// Everything learned on top of a frozen backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptedClassifier {
    pub method: Method,
    pub prompts: PromptParams,
    pub head: Linear,
    pub readout: Readout,
}

#[derive(Clone, Debug)]
pub struct Tuned {
    pub classifier: PromptedClassifier,
    pub history: Vec<EpochStats>,
}

/// Backbone output for `x` under `prompts`.
fn prompted_forward<'t>(
    tape: &'t Tape,
    frozen: &ModelVars<'t>,
    ctx: &GraphContext,
    x: &Tensor,
    prompts: &PromptVars<'t>,
) -> Result<Var<'t>> {
    let mut x = tape.constant(x.clone());
    if let PromptVars::Node(np) = prompts {
        x = node_prompt_vars(&x, np)?;
    }
    frozen.forward(ctx, x, |l, h| prompts.layer_prompt(l, h))
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let correct = logits.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

struct Learner {
    classifier: PromptedClassifier,
    adam: AdamState,
}

impl Learner {
    fn new(model: &GnnModel, ds: &LabeledDataset, method: Method, cfg: &TuneConfig) -> Result<Self> {
        cfg.validate()?;
        if ds.feature_dim() != model.dims()[0] {
            return Err(Error::Config(format!(
                "backbone expects {}-dimensional features but the dataset has {}",
                model.dims()[0],
                ds.feature_dim()
            )));
        }
        let out = model.dims()[model.num_layers()];
        let head = Linear::glorot(out, ds.num_classes(), &mut rng_for(cfg.seed, &[HEAD]));
        let prompts = PromptParams::init(method, model, cfg.anchors, cfg.slope, &mut rng_for(cfg.seed, &[PROMPT]))?;
        let mut refs: Vec<&Tensor> = prompts.named_tensors().into_iter().map(|(_, t)| t).collect();
        refs.extend([&head.weight, &head.bias]);
        let adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &refs);
        Ok(Self { classifier: PromptedClassifier { method, prompts, head, readout: cfg.readout }, adam })
    }

    /// One optimisation step on `loss`; returns the loss value.
    fn step(&mut self, tape: &Tape, loss: &Var<'_>, prompt_leaves: &[Var<'_>], head: [Var<'_>; 2]) -> Result<f64> {
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = prompt_leaves.iter().chain(&head).map(|v| grads.wrt(v)).collect();
        let c = &mut self.classifier;
        let mut params = c.prompts.tensors_mut();
        params.extend([&mut c.head.weight, &mut c.head.bias]);
        let refs: Vec<Option<&Tensor>> = g.iter().map(Some).collect();
        self.adam.step(&mut params, &refs)?;
        Ok(loss.value().get(0, 0))
    }
}

fn check_split(ds: &LabeledDataset, split: &FewShotSplit) -> Result<()> {
    let n = ds.instance_labels().len();
    if split.train_ids.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    if let Some(&bad) = split.train_ids.iter().find(|&&i| i >= n) {
        return Err(Error::Index(format!("training id {bad} out of {n} instances")));
    }
    Ok(())
}

/// Runs node or graph tuning according to the dataset's task.
pub fn tune(model: &GnnModel, ds: &LabeledDataset, split: &FewShotSplit, method: Method, cfg: &TuneConfig) -> Result<Tuned> {
    match ds.task() {
        Task::Node => tune_node_classification(model, ds, split, method, cfg),
        Task::Graph => tune_graph_classification(model, ds, split, method, cfg),
    }
}

/// Full-batch tuning of prompts and a linear head on the labelled nodes.
/// The backbone is only read.
pub fn tune_node_classification(
    model: &GnnModel,
    ds: &LabeledDataset,
    split: &FewShotSplit,
    method: Method,
    cfg: &TuneConfig,
) -> Result<Tuned> {
    if ds.task() != Task::Node {
        return Err(Error::Config("node tuning needs a node-classification dataset".into()));
    }
    check_split(ds, split)?;
    let mut learner = Learner::new(model, ds, method, cfg)?;
    let g = ds.node_graph()?;
    let ctx = model.context(&g);
    let labels = ds.instance_labels();
    let train: Rc<[usize]> = split.train_ids.clone().into();
    let train_labels: Rc<[usize]> = train.iter().map(|&i| labels[i]).collect();
    // Without prompts the backbone output never changes.
    let frozen_reps = (method == Method::ClassifierOnly)
        .then(|| crate::gnn::model_forward(model, &g, None).and_then(|h| h.gather_rows(&train)))
        .transpose()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let tape = Tape::new();
        let pv = learner.classifier.prompts.attach(&tape, true);
        let reps = match &frozen_reps {
            Some(r) => tape.constant(r.clone()),
            None => {
                let frozen = model.attach(&tape, false);
                prompted_forward(&tape, &frozen, &ctx, g.features(), &pv)?.gather_rows(Rc::clone(&train))?
            }
        };
        let head = learner.classifier.head.attach(&tape, true);
        let logits = head.forward(&reps)?;
        let train_acc = accuracy(&logits.value(), &train_labels);
        let loss = logits.cross_entropy(Rc::clone(&train_labels))?;
        let loss = learner.step(&tape, &loss, &pv.leaves(), [head.weight, head.bias])?;
        history.push(EpochStats { loss, train_acc });
    }
    Ok(Tuned { classifier: learner.classifier, history })
}

/// Pooled representations of `graphs` under the classifier's prompts.
fn graph_reps<'t>(
    tape: &'t Tape,
    model: &GnnModel,
    frozen: &ModelVars<'t>,
    graphs: &[&Graph],
    prompts: &PromptVars<'t>,
    kind: Readout,
) -> Result<Var<'t>> {
    let (union, _) = disjoint_union(graphs)?;
    let sizes: Vec<usize> = graphs.iter().map(|g| g.num_nodes()).collect();
    let member: Rc<[usize]> = membership(&sizes).into();
    let ctx = model.context(&union);
    let h = prompted_forward(tape, frozen, &ctx, union.features(), prompts)?;
    readout(h, &member, graphs.len(), kind)
}

/// Mini-batch tuning over disjoint unions of the training graphs.
pub fn tune_graph_classification(
    model: &GnnModel,
    ds: &LabeledDataset,
    split: &FewShotSplit,
    method: Method,
    cfg: &TuneConfig,
) -> Result<Tuned> {
    if ds.task() != Task::Graph {
        return Err(Error::Config("graph tuning needs a graph-classification dataset".into()));
    }
    check_split(ds, split)?;
    let mut learner = Learner::new(model, ds, method, cfg)?;
    let labels = ds.instance_labels();
    let frozen_reps = if method == Method::ClassifierOnly {
        let tape = Tape::new();
        let frozen = model.attach(&tape, false);
        let graphs: Vec<&Graph> = split.train_ids.iter().map(|&i| &ds.graphs()[i]).collect();
        let reps = graph_reps(&tape, model, &frozen, &graphs, &PromptVars::None, cfg.readout)?.value();
        Some((*reps).clone())
    } else {
        None
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Positions into the training list.
        let mut order: Vec<usize> = (0..split.train_ids.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[ORDER, epoch as u64]));
        let (mut total, mut correct) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let pv = learner.classifier.prompts.attach(&tape, true);
            let reps = match &frozen_reps {
                Some(r) => tape.constant(r.gather_rows(batch)?),
                None => {
                    let frozen = model.attach(&tape, false);
                    let graphs: Vec<&Graph> = batch.iter().map(|&k| &ds.graphs()[split.train_ids[k]]).collect();
                    graph_reps(&tape, model, &frozen, &graphs, &pv, cfg.readout)?
                }
            };
            let batch_labels: Vec<usize> = batch.iter().map(|&k| labels[split.train_ids[k]]).collect();
            let head = learner.classifier.head.attach(&tape, true);
            let logits = head.forward(&reps)?;
            correct += accuracy(&logits.value(), &batch_labels) * batch.len() as f64;
            let loss = logits.cross_entropy(batch_labels)?;
            total += learner.step(&tape, &loss, &pv.leaves(), [head.weight, head.bias])? * batch.len() as f64;
        }
        let n = split.train_ids.len() as f64;
        history.push(EpochStats { loss: total / n, train_acc: correct / n });
    }
    Ok(Tuned { classifier: learner.classifier, history })
}

impl PromptedClassifier {
    /// Logits for the instances `ids` (nodes or graphs).
    pub fn logits(&self, model: &GnnModel, ds: &LabeledDataset, ids: &[usize]) -> Result<Tensor> {
        self.prompts.check(model)?;
        let n = ds.instance_labels().len();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("id {bad} out of {n} instances")));
        }
        let tape = Tape::new();
        let frozen = model.attach(&tape, false);
        let pv = self.prompts.attach(&tape, false);
        let reps = match ds.task() {
            Task::Node => {
                let g = ds.node_graph()?;
                let ctx = model.context(&g);
                prompted_forward(&tape, &frozen, &ctx, g.features(), &pv)?.gather_rows(ids.to_vec())?
            }
            Task::Graph => {
                let graphs: Vec<&Graph> = ids.iter().map(|&i| &ds.graphs()[i]).collect();
                graph_reps(&tape, model, &frozen, &graphs, &pv, self.readout)?
            }
        };
        let out = self.head.attach(&tape, false).forward(&reps)?.value();
        Ok((*out).clone())
    }
}

/// Fraction of `ids` whose arg-max logit (lowest index on ties) is the label.
pub fn evaluate_accuracy(model: &GnnModel, classifier: &PromptedClassifier, ds: &LabeledDataset, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty id list".into()));
    }
    let logits = classifier.logits(model, ds, ids)?;
    let labels = ds.instance_labels();
    let wanted: Vec<usize> = ids.iter().map(|&i| labels[i]).collect();
    Ok(accuracy(&logits, &wanted))
}

/// Node representations of `g` produced by the frozen backbone under `prompts`.
pub fn prompted_representations(model: &GnnModel, prompts: &PromptParams, g: &Graph) -> Result<Tensor> {
    prompts.check(model)?;
    model.check_input(g)?;
    let tape = Tape::new();
    let frozen = model.attach(&tape, false);
    let pv = prompts.attach(&tape, false);
    let out = prompted_forward(&tape, &frozen, &model.context(g), g.features(), &pv)?.value();
    Ok((*out).clone())
}

/// Relative errors between autodiff and central finite differences of the
/// tuning loss over `ids`, for every prompt tensor and the head.
pub fn tuning_loss_gradient_errors(
    model: &GnnModel,
    classifier: &PromptedClassifier,
    ds: &LabeledDataset,
    ids: &[usize],
    step: f64,
) -> Result<Vec<(String, f64)>> {
    if ids.is_empty() {
        return Err(Error::Config("gradient check needs at least one id".into()));
    }
    classifier.prompts.check(model)?;
    let mut named: Vec<(String, Tensor)> =
        classifier.prompts.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    named.push(("head.weight".into(), classifier.head.weight.clone()));
    named.push(("head.bias".into(), classifier.head.bias.clone()));
    let inputs: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
    let all_labels = ds.instance_labels();
    let labels: Rc<[usize]> = ids.iter().map(|&i| all_labels[i]).collect();
    let node_graph = match ds.task() {
        Task::Node => Some(ds.node_graph()?.into_owned()),
        Task::Graph => None,
    };
    let ctx = node_graph.as_ref().map(|g| model.context(g));
    let errors = crate::tensor::autodiff_vs_finite_difference(&inputs, step, |tape, vars| {
        let k = vars.len() - 2;
        let pv = classifier.prompts.wrap(&vars[..k])?;
        let frozen = model.attach(tape, false);
        let reps = match (&node_graph, &ctx) {
            (Some(g), Some(ctx)) => prompted_forward(tape, &frozen, ctx, g.features(), &pv)?.gather_rows(ids.to_vec())?,
            _ => {
                let graphs: Vec<&Graph> = ids.iter().map(|&i| &ds.graphs()[i]).collect();
                graph_reps(tape, model, &frozen, &graphs, &pv, classifier.readout)?
            }
        };
        let head = crate::gnn::LinearVars { weight: vars[k], bias: vars[k + 1] };
        head.forward(&reps)?.cross_entropy(Rc::clone(&labels))
    })?;
    Ok(named.into_iter().map(|(n, _)| n).zip(errors).collect())
}
