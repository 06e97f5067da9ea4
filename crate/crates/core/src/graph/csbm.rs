use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two-class contextual stochastic block model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    /// Intra-class edge probability.
    pub p: f64,
    /// Inter-class edge probability.
    pub q: f64,
    pub n_per_class: usize,
}

impl CsbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Config(format!("edge probabilities must lie in [0, 1], got p={} q={}", self.p, self.q)));
        }
        if self.mu1.len() != self.mu2.len() {
            return Err(Error::Config("class means differ in dimension".into()));
        }
        if self.mu1 == self.mu2 {
            return Err(Error::Config("class means must differ".into()));
        }
        Ok(())
    }

    /// `‖μ1 − μ2‖₂`.
    pub fn mean_gap(&self) -> f64 {
        self.mu1.iter().zip(&self.mu2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// Means `±(gap/2)` along the first axis of a `dim`-dimensional space.
    pub fn symmetric(dim: usize, gap: f64, p: f64, q: f64, n_per_class: usize) -> Self {
        let mut mu1 = vec![0.0; dim];
        let mut mu2 = vec![0.0; dim];
        if dim > 0 {
            mu1[0] = gap / 2.0;
            mu2[0] = -gap / 2.0;
        }
        Self { mu1, mu2, p, q, n_per_class }
    }
}

/// Samples a CSBM graph. Nodes `0..n` belong to class 0, `n..2n` to class 1.
pub fn csbm_generate<T: Scalar>(params: &CsbmParams, seed: u64) -> Result<(Graph<T>, Vec<usize>)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_per_class;
    let total = 2 * n;
    let dim = params.mu1.len();
    let labels: Vec<usize> = (0..total).map(|i| usize::from(i >= n)).collect();
    let mut features = Tensor::<T>::zeros(total, dim);
    for i in 0..total {
        let mu = if labels[i] == 0 { &params.mu1 } else { &params.mu2 };
        for (c, &m) in mu.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            features.set(i, c, T::of(m + z));
        }
    }
    let mut edges = Vec::new();
    for i in 0..total {
        for j in i + 1..total {
            let prob = if labels[i] == labels[j] { params.p } else { params.q };
            if rng.random::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    let (graph, _) = Graph::from_edges(total, &edges, features)?;
    Ok((graph, labels))
}
