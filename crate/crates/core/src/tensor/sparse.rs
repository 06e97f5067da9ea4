use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Constant CSR matrix used for message-passing aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(rows: usize, cols: usize, offsets: Vec<usize>, indices: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if offsets.len() != rows + 1 || offsets.last() != Some(&indices.len()) || indices.len() != values.len() {
            return Err(Error::shape("inconsistent CSR arrays"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::shape("CSR offsets must be non-decreasing"));
        }
        if let Some(&bad) = indices.iter().find(|&&c| c >= cols) {
            return Err(Error::Index(format!("column {bad} out of {cols}")));
        }
        Ok(Self { rows, cols, offsets, indices, values })
    }

    /// Builds from unsorted `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!("entry ({r},{c}) outside {rows}x{cols}")));
            }
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            offsets[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Self::new(rows, cols, offsets, indices, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let c = self.indices[k];
                let v = t.get(r, c) + self.values[k];
                t.set(r, c, v);
            }
        }
        t
    }

    /// `self · h`.
    pub fn mul_dense(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        if h.rows() != self.cols {
            return Err(Error::shape(format!(
                "sparse matmul: {}x{} by {}x{}",
                self.rows,
                self.cols,
                h.rows(),
                h.cols()
            )));
        }
        let d = h.cols();
        let mut out = Tensor::zeros(self.rows, d);
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                let v = self.values[k];
                let src = h.row(self.indices[k]);
                for (o, &x) in out_row.iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    pub fn transpose_mul_dense(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if g.rows() != self.rows {
            return Err(Error::shape(format!(
                "sparse transpose matmul: ({}x{})ᵀ by {}x{}",
                self.rows,
                self.cols,
                g.rows(),
                g.cols()
            )));
        }
        let d = g.cols();
        let mut out = Tensor::zeros(self.cols, d);
        for r in 0..self.rows {
            let g_row = g.row(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                let v = self.values[k];
                let dst = out.row_mut(self.indices[k]);
                for (o, &x) in dst.iter_mut().zip(g_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}
