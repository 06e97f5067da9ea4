//! Undirected graphs in CSR form, datasets, few-shot splits, and CSBM sampling.

mod csbm;
mod dataset;
mod split;

pub use csbm::{csbm_generate, CsbmParams};
pub use dataset::{load_dataset, load_dataset_with_stats, save_dataset, LabeledDataset, LoadStats, Task};
pub use split::{kshot_sample, FewShotSplit};

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{SparseMatrix, Tensor};

/// Undirected graph stored as symmetric directed CSR entries.
///
/// Row `i` lists the neighbours `j` whose messages flow into `i`. Both
/// directions of an undirected edge are stored and share an edge id.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T = f64> {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
    num_edges: usize,
    features: Tensor<T>,
}

/// What [`Graph::from_edges`] discarded while building the CSR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub duplicates: usize,
    pub self_loops: usize,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from undirected pairs. Self-loops are dropped and
    /// duplicate pairs (in either orientation) collapse to one edge.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)], features: Tensor<T>) -> Result<(Self, EdgeStats)> {
        if features.rows() != num_nodes {
            return Err(Error::shape(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        let mut stats = EdgeStats::default();
        let mut pairs = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::Index(format!("edge ({i},{j}) references a node outside 0..{num_nodes}")));
            }
            if i == j {
                stats.self_loops += 1;
                continue;
            }
            pairs.push((i.min(j), i.max(j)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        stats.duplicates = before - pairs.len();

        let mut degree = vec![0usize; num_nodes];
        for &(i, j) in &pairs {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for i in 0..num_nodes {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut neighbors = vec![0usize; offsets[num_nodes]];
        let mut edge_ids = vec![0usize; offsets[num_nodes]];
        // Pairs are sorted, so each row receives its neighbours in ascending order.
        for (id, &(i, j)) in pairs.iter().enumerate() {
            neighbors[cursor[i]] = j;
            edge_ids[cursor[i]] = id;
            cursor[i] += 1;
        }
        for (id, &(i, j)) in pairs.iter().enumerate() {
            neighbors[cursor[j]] = i;
            edge_ids[cursor[j]] = id;
            cursor[j] += 1;
        }
        for i in 0..num_nodes {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            let mut row: Vec<(usize, usize)> = neighbors[lo..hi].iter().copied().zip(edge_ids[lo..hi].iter().copied()).collect();
            row.sort_unstable();
            for (k, (n, e)) in row.into_iter().enumerate() {
                neighbors[lo + k] = n;
                edge_ids[lo + k] = e;
            }
        }
        let graph = Self { num_nodes, offsets, neighbors, edge_ids, num_edges: pairs.len(), features };
        Ok((graph, stats))
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Number of stored CSR entries (twice the undirected edge count).
    pub fn num_entries(&self) -> usize {
        self.neighbors.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Source node of every CSR entry.
    pub fn csr_targets(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn edge_ids(&self) -> &[usize] {
        &self.edge_ids
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Receiving node of every CSR entry.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.neighbors.len());
        for i in 0..self.num_nodes {
            rows.extend(std::iter::repeat_n(i, self.degree(i)));
        }
        rows
    }

    /// CSR entry index of `i <- j`, if the edge exists.
    pub fn entry(&self, i: usize, j: usize) -> Option<usize> {
        let row = self.neighbors(i);
        row.binary_search(&j).ok().map(|k| self.offsets[i] + k)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && self.entry(i, j).is_some()
    }

    /// Undirected edges `(i, j)` with `i < j`, indexed by edge id.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = vec![(0, 0); self.num_edges];
        for i in 0..self.num_nodes {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let j = self.neighbors[k];
                if i < j {
                    edges[self.edge_ids[k]] = (i, j);
                }
            }
        }
        edges
    }

    pub fn with_features(&self, features: Tensor<T>) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::shape(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.num_nodes
            )));
        }
        Ok(Self { features, ..self.clone() })
    }

    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            num_nodes: self.num_nodes,
            offsets: self.offsets.clone(),
            neighbors: self.neighbors.clone(),
            edge_ids: self.edge_ids.clone(),
            num_edges: self.num_edges,
            features: self.features.cast(),
        }
    }

    /// Checks the structural invariants: offsets, symmetry with shared edge
    /// ids, and absence of self-loops.
    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.num_nodes + 1 || self.offsets.last() != Some(&self.neighbors.len()) {
            return Err(Error::Validation("CSR offsets inconsistent with entry count".into()));
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Validation("CSR offsets decrease".into()));
        }
        for i in 0..self.num_nodes {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let j = self.neighbors[k];
                if j >= self.num_nodes {
                    return Err(Error::Validation(format!("dangling neighbour {j} in row {i}")));
                }
                if j == i {
                    return Err(Error::Validation(format!("self-loop stored at node {i}")));
                }
                match self.entry(j, i) {
                    Some(r) if self.edge_ids[r] == self.edge_ids[k] => {}
                    Some(_) => return Err(Error::Validation(format!("edge ({i},{j}) directions disagree on id"))),
                    None => return Err(Error::Validation(format!("edge ({i},{j}) has no reverse"))),
                }
            }
        }
        if self.features.rows() != self.num_nodes {
            return Err(Error::Validation("feature rows differ from node count".into()));
        }
        Ok(())
    }

    /// Dense 0/1 adjacency; test and oracle use only.
    pub fn dense_adjacency(&self) -> Tensor<T> {
        let mut a = Tensor::zeros(self.num_nodes, self.num_nodes);
        for i in 0..self.num_nodes {
            for &j in self.neighbors(i) {
                a.set(i, j, T::one());
            }
        }
        a
    }
}

/// Per-entry GCN coefficients `1/sqrt((d_i+s)(d_j+s))` plus optional self weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency<T = f64> {
    pub edge_coeffs: Vec<T>,
    pub self_coeffs: Option<Vec<T>>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    /// Sparse operator including the self weights on the diagonal.
    pub fn to_sparse(&self, g: &Graph<T>) -> Rc<SparseMatrix<T>> {
        let n = g.num_nodes();
        let mut offsets = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(g.num_entries() + n);
        let mut values = Vec::with_capacity(g.num_entries() + n);
        for i in 0..n {
            let mut self_done = self.self_coeffs.is_none();
            for k in g.offsets[i]..g.offsets[i + 1] {
                let j = g.neighbors[k];
                if !self_done && j > i {
                    indices.push(i);
                    values.push(self.self_coeffs.as_ref().expect("checked")[i]);
                    self_done = true;
                }
                indices.push(j);
                values.push(self.edge_coeffs[k]);
            }
            if !self_done {
                indices.push(i);
                values.push(self.self_coeffs.as_ref().expect("checked")[i]);
            }
            offsets[i + 1] = indices.len();
        }
        Rc::new(SparseMatrix::new(n, n, offsets, indices, values).expect("CSR built from a valid graph"))
    }
}

pub fn normalized_adjacency<T: Scalar>(g: &Graph<T>, add_self_loops: bool) -> NormalizedAdjacency<T> {
    let s = if add_self_loops { 1 } else { 0 };
    let deg: Vec<T> = (0..g.num_nodes()).map(|i| T::of((g.degree(i) + s) as f64)).collect();
    let mut edge_coeffs = Vec::with_capacity(g.num_entries());
    for i in 0..g.num_nodes() {
        for &j in g.neighbors(i) {
            edge_coeffs.push(T::one() / (deg[i] * deg[j]).sqrt());
        }
    }
    let self_coeffs = add_self_loops.then(|| deg.iter().map(|&d| T::one() / d).collect());
    NormalizedAdjacency { edge_coeffs, self_coeffs }
}

/// Block-diagonal union. Returns the batched graph and each source graph's
/// first node index.
pub fn disjoint_union<T: Scalar>(graphs: &[&Graph<T>]) -> Result<(Graph<T>, Vec<usize>)> {
    let dim = graphs.first().map_or(0, |g| g.feature_dim());
    let mut node_offsets = Vec::with_capacity(graphs.len());
    let mut offsets = vec![0usize];
    let mut neighbors = Vec::new();
    let mut edge_ids = Vec::new();
    let mut rows: Vec<&Tensor<T>> = Vec::with_capacity(graphs.len());
    let (mut base, mut edge_base) = (0usize, 0usize);
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != dim {
            return Err(Error::shape(format!(
                "graph {gi} has feature dimension {} but graph 0 has {dim}",
                g.feature_dim()
            )));
        }
        node_offsets.push(base);
        let entry_base = neighbors.len();
        offsets.extend(g.offsets[1..].iter().map(|&o| o + entry_base));
        neighbors.extend(g.neighbors.iter().map(|&j| j + base));
        edge_ids.extend(g.edge_ids.iter().map(|&e| e + edge_base));
        rows.push(&g.features);
        base += g.num_nodes;
        edge_base += g.num_edges;
    }
    let features = if rows.is_empty() { Tensor::zeros(0, 0) } else { Tensor::concat_rows(&rows)? };
    let graph = Graph { num_nodes: base, offsets, neighbors, edge_ids, num_edges: edge_base, features };
    Ok((graph, node_offsets))
}

/// Node-to-graph membership for a union built from graphs of the given sizes.
pub fn membership(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(g, n)).collect()
}

#[cfg(test)]
mod tests;
