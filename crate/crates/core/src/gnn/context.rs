use std::rc::Rc;

use super::ModelKind;
use crate::graph::{normalized_adjacency, Graph};
use crate::scalar::Scalar;
use crate::tensor::{EntryIndex, SparseMatrix, Tensor};

/// Per-graph constants shared by every forward pass of one backbone kind.
#[derive(Clone, Debug)]
pub struct GraphContext<T = f64> {
    pub kind: ModelKind,
    pub num_nodes: usize,
    /// Receiving node `i` of every CSR entry.
    pub entry_rows: Rc<[usize]>,
    /// Sending node `j` of every CSR entry.
    pub entry_cols: Rc<[usize]>,
    /// Aggregation operator including the self term.
    pub operator: Rc<SparseMatrix<T>>,
    /// Message coefficient per CSR entry, `E x 1`.
    pub edge_coeffs: Tensor<T>,
    /// `Σ_j coeff_ij` per node, `N x 1`.
    pub coeff_row_sums: Tensor<T>,
    /// Rows, columns and coefficients together, for fused per-entry ops.
    pub entries: EntryIndex<T>,
}

impl<T: Scalar> GraphContext<T> {
    /// GCN contexts use symmetric normalisation with self-loops; GIN contexts
    /// use `A + (1+ε)I` with unit edge coefficients.
    pub fn new(g: &Graph<T>, kind: ModelKind, gin_epsilon: T) -> Self {
        let entry_rows: Rc<[usize]> = g.entry_rows().into();
        let entry_cols: Rc<[usize]> = g.csr_targets().to_vec().into();
        let (operator, coeffs) = match kind {
            ModelKind::Gcn => {
                let norm = normalized_adjacency(g, true);
                (norm.to_sparse(g), norm.edge_coeffs)
            }
            ModelKind::Gin => {
                let self_weight = T::one() + gin_epsilon;
                let n = g.num_nodes();
                let mut offsets = vec![0usize; n + 1];
                let mut indices = Vec::with_capacity(g.num_entries() + n);
                let mut values = Vec::with_capacity(g.num_entries() + n);
                for i in 0..n {
                    let mut self_done = false;
                    for &j in g.neighbors(i) {
                        if !self_done && j > i {
                            indices.push(i);
                            values.push(self_weight);
                            self_done = true;
                        }
                        indices.push(j);
                        values.push(T::one());
                    }
                    if !self_done {
                        indices.push(i);
                        values.push(self_weight);
                    }
                    offsets[i + 1] = indices.len();
                }
                let op = SparseMatrix::new(n, n, offsets, indices, values).expect("valid CSR");
                (Rc::new(op), vec![T::one(); g.num_entries()])
            }
        };
        let mut sums = vec![T::zero(); g.num_nodes()];
        for (k, &i) in entry_rows.iter().enumerate() {
            sums[i] += coeffs[k];
        }
        let entries = EntryIndex {
            rows: Rc::clone(&entry_rows),
            cols: Rc::clone(&entry_cols),
            coeffs: coeffs.clone().into(),
            num_nodes: g.num_nodes(),
        };
        Self {
            kind,
            num_nodes: g.num_nodes(),
            entry_rows,
            entry_cols,
            entries,
            operator,
            edge_coeffs: Tensor::column(&coeffs),
            coeff_row_sums: Tensor::column(&sums),
        }
    }

    pub fn num_entries(&self) -> usize {
        self.entry_rows.len()
    }
}
