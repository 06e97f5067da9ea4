use rand::Rng;

use crate::error::{Error, Result};
use crate::gnn::{Linear, LinearVars};
use crate::tensor::{Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-12;

/// Normalised-temperature cross entropy over the `2B` rows of `[z1; z2]`.
///
/// Row `i` of `z1` and row `i` of `z2` are positives; every other row in the
/// batch is a negative. Self-similarities are masked out.
pub fn ntxent_loss<'t>(z1: &Var<'t>, z2: &Var<'t>, temperature: f64) -> Result<Var<'t>> {
    let (b, d) = z1.shape();
    if z2.shape() != (b, d) {
        return Err(Error::shape(format!("ntxent: views {b}x{d} and {:?}", z2.shape())));
    }
    if b < 2 {
        return Err(Error::Config(format!("ntxent needs a batch of at least 2 pairs, got {b}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let tape = z1.tape();
    let z = tape.concat_rows(&[*z1, *z2])?.l2_normalize_rows(NORM_EPS);
    let sim = z.matmul(&z.transpose())?.scale(1.0 / temperature);
    let mut mask = Tensor::zeros(2 * b, 2 * b);
    for i in 0..2 * b {
        mask.set(i, i, -1e9);
    }
    let logits = sim.add(&tape.constant(mask))?;
    let labels: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
    logits.cross_entropy(labels)
}

/// Two-layer MLP applied to readouts during contrastive pre-training only.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub first: Linear,
    pub second: Linear,
}

impl ProjectionHead {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self { first: Linear::glorot(dim, dim, rng), second: Linear::glorot(dim, dim, rng) }
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn attach<'t>(&self, tape: &'t Tape) -> [LinearVars<'t>; 2] {
        [self.first.attach(tape, true), self.second.attach(tape, true)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.first.weight, &mut self.first.bias, &mut self.second.weight, &mut self.second.bias]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.first.weight, &self.first.bias, &self.second.weight, &self.second.bias]
    }
}

pub(crate) fn project<'t>(head: &[LinearVars<'t>; 2], x: &Var<'t>) -> Result<Var<'t>> {
    let h = head[0].forward(x)?.relu();
    head[1].forward(&h)
}
