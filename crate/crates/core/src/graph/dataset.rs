use std::borrow::Cow;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{disjoint_union, EdgeStats, Graph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(Task::Node),
            "graph" => Ok(Task::Graph),
            other => Err(Error::Config(format!("unknown task '{other}' (expected node or graph)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Labels {
    Node(Vec<Vec<usize>>),
    Graph(Vec<usize>),
}

/// Graphs plus exactly one kind of label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    graphs: Vec<Graph<f64>>,
    labels: Labels,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn node_task(graphs: Vec<Graph<f64>>, node_labels: Vec<Vec<usize>>, num_classes: usize) -> Result<Self> {
        if graphs.len() != node_labels.len() {
            return Err(Error::Validation(format!(
                "{} graphs but {} node label vectors",
                graphs.len(),
                node_labels.len()
            )));
        }
        for (gi, (g, labels)) in graphs.iter().zip(&node_labels).enumerate() {
            if labels.len() != g.num_nodes() {
                return Err(Error::Validation(format!(
                    "graph {gi}: {} node labels for {} nodes",
                    labels.len(),
                    g.num_nodes()
                )));
            }
            check_labels(labels, num_classes, &format!("graph {gi} node_labels"))?;
        }
        let ds = Self { graphs, labels: Labels::Node(node_labels), num_classes };
        ds.check_dims()?;
        Ok(ds)
    }

    pub fn graph_task(graphs: Vec<Graph<f64>>, graph_labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if graphs.len() != graph_labels.len() {
            return Err(Error::Validation(format!(
                "{} graphs but {} graph labels",
                graphs.len(),
                graph_labels.len()
            )));
        }
        check_labels(&graph_labels, num_classes, "graph_label")?;
        let ds = Self { graphs, labels: Labels::Graph(graph_labels), num_classes };
        ds.check_dims()?;
        Ok(ds)
    }

    fn check_dims(&self) -> Result<()> {
        let dim = self.feature_dim();
        match self.graphs.iter().position(|g| g.feature_dim() != dim) {
            Some(gi) => Err(Error::Validation(format!(
                "graph {gi} has feature dimension {} but graph 0 has {dim}",
                self.graphs[gi].feature_dim()
            ))),
            None => Ok(()),
        }
    }

    pub fn task(&self) -> Task {
        match self.labels {
            Labels::Node(_) => Task::Node,
            Labels::Graph(_) => Task::Graph,
        }
    }

    pub fn graphs(&self) -> &[Graph<f64>] {
        &self.graphs
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn node_labels(&self) -> Option<&[Vec<usize>]> {
        match &self.labels {
            Labels::Node(l) => Some(l),
            Labels::Graph(_) => None,
        }
    }

    pub fn graph_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Graph(l) => Some(l),
            Labels::Node(_) => None,
        }
    }

    /// Label of every instance: nodes (concatenated across graphs) for node
    /// tasks, graphs for graph tasks.
    pub fn instance_labels(&self) -> Vec<usize> {
        match &self.labels {
            Labels::Node(l) => l.iter().flatten().copied().collect(),
            Labels::Graph(l) => l.clone(),
        }
    }

    /// The single graph node instances index into. Multi-graph node datasets
    /// are joined with [`disjoint_union`].
    pub fn node_graph(&self) -> Result<Cow<'_, Graph<f64>>> {
        match self.graphs.as_slice() {
            [only] => Ok(Cow::Borrowed(only)),
            many => {
                let refs: Vec<&Graph<f64>> = many.iter().collect();
                Ok(Cow::Owned(disjoint_union(&refs)?.0))
            }
        }
    }
}

fn check_labels(labels: &[usize], num_classes: usize, what: &str) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(bad) => Err(Error::Validation(format!("{what}: label {bad} >= num_classes {num_classes}"))),
        None => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container {
    num_classes: usize,
    task: Task,
    graphs: Vec<GraphRecord>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
}

/// What the loader dropped, summed over all graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_dataset_with_stats(path).map(|(ds, _)| ds)
}

pub fn load_dataset_with_stats(path: impl AsRef<Path>) -> Result<(LabeledDataset, LoadStats)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_dataset(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn parse_dataset(text: &str) -> Result<(LabeledDataset, LoadStats)> {
    let container: Container = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut stats = LoadStats::default();
    let mut graphs = Vec::with_capacity(container.graphs.len());
    let mut node_labels = Vec::new();
    let mut graph_labels = Vec::new();
    for (gi, rec) in container.graphs.into_iter().enumerate() {
        if rec.features.len() != rec.num_nodes {
            return Err(Error::Parse(format!(
                "graphs[{gi}].features: {} rows for num_nodes {}",
                rec.features.len(),
                rec.num_nodes
            )));
        }
        let features = Tensor::from_rows(&rec.features).map_err(|e| Error::Parse(format!("graphs[{gi}].features: {e}")))?;
        let edges: Vec<(usize, usize)> = rec.edges.iter().map(|e| (e[0], e[1])).collect();
        let (g, EdgeStats { duplicates, self_loops }) =
            Graph::from_edges(rec.num_nodes, &edges, features).map_err(|e| Error::Parse(format!("graphs[{gi}].edges: {e}")))?;
        stats.duplicate_edges += duplicates;
        stats.self_loops += self_loops;
        graphs.push(g);
        match container.task {
            Task::Node => {
                let labels = rec
                    .node_labels
                    .ok_or_else(|| Error::Parse(format!("graphs[{gi}].node_labels missing for a node task")))?;
                node_labels.push(labels);
            }
            Task::Graph => {
                let label = rec
                    .graph_label
                    .ok_or_else(|| Error::Parse(format!("graphs[{gi}].graph_label missing for a graph task")))?;
                graph_labels.push(label);
            }
        }
    }
    if stats.self_loops > 0 {
        log::warn!("dropped {} self-loop(s) while loading", stats.self_loops);
    }
    let ds = match container.task {
        Task::Node => LabeledDataset::node_task(graphs, node_labels, container.num_classes)?,
        Task::Graph => LabeledDataset::graph_task(graphs, graph_labels, container.num_classes)?,
    };
    Ok((ds, stats))
}

pub(crate) fn dataset_to_json(ds: &LabeledDataset) -> Result<String> {
    let graphs = ds
        .graphs
        .iter()
        .enumerate()
        .map(|(gi, g)| GraphRecord {
            num_nodes: g.num_nodes(),
            edges: g.undirected_edges().into_iter().map(|(i, j)| [i, j]).collect(),
            features: g.features().to_rows(),
            node_labels: ds.node_labels().map(|l| l[gi].clone()),
            graph_label: ds.graph_labels().map(|l| l[gi]),
        })
        .collect();
    let container = Container { num_classes: ds.num_classes, task: ds.task(), graphs };
    serde_json::to_string(&container).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    crate::container::write_atomic(path, dataset_to_json(ds)?.as_bytes())
}
