//! Define-by-run reverse-mode autodiff.
//!
//! Every forward operation appends a node to the [`Tape`]; [`Tape::backward`]
//! walks the nodes in strict reverse creation order exactly once and returns a
//! fresh gradient map. Nothing accumulates on the tape itself, so calling
//! `backward` twice yields identical results.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{SparseMatrix, Tensor};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId, Bcast),
    Sub(NodeId, NodeId, Bcast),
    Mul(NodeId, NodeId, Bcast),
    Scale(NodeId, T),
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Transpose(NodeId),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Rc<[usize]>),
    ScatterAddRows(NodeId, Rc<[usize]>),
    SpMM(Rc<SparseMatrix<T>>, NodeId),
    SoftmaxRows(NodeId),
    L2NormalizeRows(NodeId, T),
    SumAll(NodeId),
    SumCols(NodeId),
    CrossEntropy(NodeId, Rc<Tensor<T>>, Rc<[usize]>),
    BceWithLogits(NodeId, Rc<[T]>),
    EdgeSoftmax(NodeId, NodeId, EntryIndex<T>, T),
}

/// Receiving node, sending node and coefficient of every entry of a sparse
/// message-passing pattern.
#[derive(Clone, Debug)]
pub struct EntryIndex<T> {
    pub rows: Rc<[usize]>,
    pub cols: Rc<[usize]>,
    pub coeffs: Rc<[T]>,
    pub num_nodes: usize,
}

struct Node<T> {
    op: Op<T>,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
///
/// A tape is single-threaded; build a new one per forward pass.
pub struct Tape<T = f64> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f64> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}[{}x{}]", self.id, r, c)
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T = f64> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`, or `None` if no gradient reached it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`; unreachable nodes get zeros of the right shape.
    pub fn wrt(&self, var: &Var<'_, T>) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn bcast_mode<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<Bcast> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    if (ar, ac) == (br, bc) {
        Ok(Bcast::Same)
    } else if (br, bc) == (1, 1) {
        Ok(Bcast::Scalar)
    } else if br == 1 && bc == ac {
        Ok(Bcast::Row)
    } else if bc == 1 && br == ar {
        Ok(Bcast::Col)
    } else {
        Err(Error::shape(format!("{what}: cannot combine {ar}x{ac} with {br}x{bc}")))
    }
}

fn broadcast_zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mode: Bcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (rows, cols) = a.shape();
    let mut out = Vec::with_capacity(rows * cols);
    let ad = a.data();
    let bd = b.data();
    for r in 0..rows {
        for c in 0..cols {
            let bv = match mode {
                Bcast::Same => bd[r * cols + c],
                Bcast::Row => bd[c],
                Bcast::Col => bd[r],
                Bcast::Scalar => bd[0],
            };
            out.push(f(ad[r * cols + c], bv));
        }
    }
    Tensor::new(rows, cols, out).expect("shape preserved")
}

/// Reduces a full-shape gradient down to the broadcast operand's shape.
fn reduce_to<T: Scalar>(g: &Tensor<T>, mode: Bcast, shape: (usize, usize)) -> Tensor<T> {
    match mode {
        Bcast::Same => g.clone(),
        Bcast::Scalar => Tensor::scalar(g.sum()),
        Bcast::Row => {
            let mut out = Tensor::zeros(1, shape.1);
            for r in 0..g.rows() {
                for (o, &x) in out.data_mut().iter_mut().zip(g.row(r)) {
                    *o += x;
                }
            }
            out
        }
        Bcast::Col => {
            let sums: Vec<T> = (0..g.rows()).map(|r| g.row(r).iter().copied().sum()).collect();
            Tensor::column(&sums)
        }
    }
}

fn softmax_rows_raw<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        if row.is_empty() {
            continue;
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `softmax(leaky(a + b))` into `out`, stabilised like `softmax_rows_raw`.
fn entry_softmax<T: Scalar>(a: &[T], b: &[T], slope: T, out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        let z = x + y;
        *o = if z >= T::zero() { z } else { z * slope };
    }
    let max = out.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

/// Per-node exponentials that factor `exp(leaky(a_i + b_j))` into products:
/// `exp(a − α)·exp(b − β)` on the non-negative branch and
/// `exp(slope·a − α)·exp(slope·b − β)` on the negative one, with `α`, `β`
/// the row maxima. The common factor `exp(−α−β)` cancels in the softmax.
struct SoftmaxFactors<T> {
    pos: [Tensor<T>; 2],
    neg: [Tensor<T>; 2],
}

impl<T: Scalar> SoftmaxFactors<T> {
    fn new(a: &Tensor<T>, b: &Tensor<T>, slope: T) -> Self {
        let half = |x: &Tensor<T>, scale: T| {
            let mut out = x.clone();
            for r in 0..x.rows() {
                let max = x.row(r).iter().copied().fold(T::neg_infinity(), T::max);
                for v in out.row_mut(r) {
                    *v = (*v * scale - max).exp();
                }
            }
            out
        };
        Self { pos: [half(a, T::one()), half(b, T::one())], neg: [half(a, slope), half(b, slope)] }
    }

    /// Scores of entry `(i, j)`; falls back to direct evaluation when the
    /// factored sum leaves the comfortable floating-point range.
    fn scores(&self, a: &Tensor<T>, b: &Tensor<T>, i: usize, j: usize, slope: T, out: &mut [T]) {
        let (ai, bj) = (a.row(i), b.row(j));
        let (pa, pb, na, nb) = (self.pos[0].row(i), self.pos[1].row(j), self.neg[0].row(i), self.neg[1].row(j));
        let mut total = T::zero();
        for (t, o) in out.iter_mut().enumerate() {
            let (p, n) = (pa[t] * pb[t], na[t] * nb[t]);
            *o = if ai[t] + bj[t] >= T::zero() { p } else { n };
            total += *o;
        }
        if total.is_normal() && total < T::max_value().sqrt() {
            for v in out.iter_mut() {
                *v = *v / total;
            }
        } else {
            entry_softmax(ai, bj, slope, out);
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value: Rc::new(value), requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Op::Leaf, value, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Op::Leaf, value, false)
    }

    fn value(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn check<'t>(&'t self, v: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::Config("variable belongs to a different tape".into()))
        }
    }

    /// `s · h` for a constant sparse matrix `s`.
    pub fn spmm<'t>(&'t self, s: &Rc<SparseMatrix<T>>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check(&h)?;
        let out = s.mul_dense(&h.value())?;
        Ok(self.push(Op::SpMM(Rc::clone(s), h.id), out, h.requires_grad()))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        for p in parts {
            self.check(p)?;
        }
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_rows(&refs)?;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(Op::ConcatRows(parts.iter().map(|p| p.id).collect()), out, rg))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        for p in parts {
            self.check(p)?;
        }
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let rows = values.first().map_or(0, |v| v.rows());
        if let Some(v) = values.iter().find(|v| v.rows() != rows) {
            return Err(Error::shape(format!("concat_cols: {} vs {} rows", v.rows(), rows)));
        }
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(Op::ConcatCols(parts.iter().map(|p| p.id).collect()), Tensor::new(rows, cols, data)?, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.shape() != (1, 1) {
            let (r, c) = root.value.shape();
            return Err(Error::shape(format!("backward needs a 1x1 loss, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], id: NodeId, g: Tensor<T>) {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g).expect("gradient shapes agree"),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior gradients are consumed; leaf gradients stay in the map.
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        acc(&mut grads, &nodes, *a, g.matmul(&bv.transpose())?);
                    }
                    if nodes[*b].requires_grad {
                        acc(&mut grads, &nodes, *b, av.transpose().matmul(&g)?);
                    }
                }
                Op::Add(a, b, mode) => {
                    let bshape = nodes[*b].value.shape();
                    acc(&mut grads, &nodes, *b, reduce_to(&g, *mode, bshape));
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Sub(a, b, mode) => {
                    let bshape = nodes[*b].value.shape();
                    acc(&mut grads, &nodes, *b, reduce_to(&g, *mode, bshape).map(|x| -x));
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Mul(a, b, mode) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*b].requires_grad {
                        let full = g.zip_map(av, |x, y| x * y)?;
                        acc(&mut grads, &nodes, *b, reduce_to(&full, *mode, bv.shape()));
                    }
                    if nodes[*a].requires_grad {
                        acc(&mut grads, &nodes, *a, broadcast_zip(&g, bv, *mode, |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, &nodes, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let x = &nodes[*a].value;
                    let dx = g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { T::zero() })?;
                    acc(&mut grads, &nodes, *a, dx);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &nodes[*a].value;
                    let s = *slope;
                    let dx = g.zip_map(x, |gi, xi| if xi >= T::zero() { gi } else { gi * s })?;
                    acc(&mut grads, &nodes, *a, dx);
                }
                Op::Transpose(a) => acc(&mut grads, &nodes, *a, g.transpose()),
                Op::SliceRows(a, start) => {
                    let (r, c) = nodes[*a].value.shape();
                    let mut full = Tensor::zeros(r, c);
                    full.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, &nodes, *a, full);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = nodes[p].value.rows();
                        acc(&mut grads, &nodes, p, g.slice_rows(start, start + rows)?);
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let (rows, cols) = nodes[p].value.shape();
                        if nodes[p].requires_grad {
                            let mut data = Vec::with_capacity(rows * cols);
                            for r in 0..rows {
                                data.extend_from_slice(&g.row(r)[start..start + cols]);
                            }
                            acc(&mut grads, &nodes, p, Tensor::new(rows, cols, data)?);
                        }
                        start += cols;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = nodes[*a].value.shape();
                    let mut full = Tensor::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, &x) in full.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, &nodes, *a, full);
                }
                Op::ScatterAddRows(a, targets) => {
                    acc(&mut grads, &nodes, *a, g.gather_rows(targets)?);
                }
                Op::SpMM(s, h) => acc(&mut grads, &nodes, *h, s.transpose_mul_dense(&g)?),
                Op::SoftmaxRows(a) => {
                    let mut dx = g.clone();
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let dot: T = y.iter().zip(g.row(r)).map(|(&yi, &gi)| yi * gi).sum();
                        for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(y).zip(g.row(r)) {
                            *d = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, &nodes, *a, dx);
                }
                Op::EdgeSoftmax(a, b, index, slope) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (n, m) = av.shape();
                    let mut da = Tensor::zeros(n, m);
                    let mut db = Tensor::zeros(n, m);
                    let mut s = vec![T::zero(); m];
                    let factors = SoftmaxFactors::new(av, bv, *slope);
                    for (k, (&i, &j)) in index.rows.iter().zip(index.cols.iter()).enumerate() {
                        let (ai, bj) = (av.row(i), bv.row(j));
                        factors.scores(av, bv, i, j, *slope, &mut s);
                        let c = index.coeffs[k];
                        let gi = g.row(i);
                        let dot: T = s.iter().zip(gi).map(|(&si, &x)| si * x).sum::<T>() * c;
                        let dbj = &mut db.data_mut()[j * m..(j + 1) * m];
                        for t in 0..m {
                            let dz = s[t] * (c * gi[t] - dot);
                            let dz = if ai[t] + bj[t] < T::zero() { dz * *slope } else { dz };
                            s[t] = dz;
                            dbj[t] += dz;
                        }
                        for (d, &dz) in da.row_mut(i).iter_mut().zip(&s) {
                            *d += dz;
                        }
                    }
                    acc(&mut grads, &nodes, *a, da);
                    acc(&mut grads, &nodes, *b, db);
                }
                Op::L2NormalizeRows(a, eps) => {
                    let x = &nodes[*a].value;
                    let mut dx = g.clone();
                    for r in 0..x.rows() {
                        let norm = x.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
                        let y = out.row(r);
                        if norm > *eps {
                            let dot: T = y.iter().zip(g.row(r)).map(|(&yi, &gi)| yi * gi).sum();
                            for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(y).zip(g.row(r)) {
                                *d = (gi - yi * dot) / norm;
                            }
                        } else {
                            for d in dx.row_mut(r) {
                                *d /= *eps;
                            }
                        }
                    }
                    acc(&mut grads, &nodes, *a, dx);
                }
                Op::SumAll(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    acc(&mut grads, &nodes, *a, Tensor::full(r, c, g.data()[0]));
                }
                Op::SumCols(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    let mut full = Tensor::zeros(r, c);
                    for i in 0..r {
                        let gi = g.data()[i];
                        full.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    acc(&mut grads, &nodes, *a, full);
                }
                Op::CrossEntropy(a, probs, labels) => {
                    let n = T::of(labels.len() as f64);
                    let scale = g.data()[0] / n;
                    let mut dx = (**probs).clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let v = dx.get(r, y) - T::one();
                        dx.set(r, y, v);
                    }
                    acc(&mut grads, &nodes, *a, dx.scale(scale));
                }
                Op::BceWithLogits(a, targets) => {
                    let x = &nodes[*a].value;
                    let n = T::of(targets.len() as f64);
                    let scale = g.data()[0] / n;
                    let data = x
                        .data()
                        .iter()
                        .zip(targets.iter())
                        .map(|(&xi, &yi)| (sigmoid(xi) - yi) * scale)
                        .collect();
                    acc(&mut grads, &nodes, *a, Tensor::new(x.rows(), x.cols(), data)?);
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(&self, op: Op<T>, value: Tensor<T>) -> Var<'t, T> {
        self.tape.push(op, value, self.requires_grad())
    }

    fn binary(&self, other: &Var<'t, T>, op: Op<T>, value: Tensor<T>) -> Var<'t, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(op, value, rg)
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check(other)?;
        let out = self.value().matmul(&other.value())?;
        Ok(self.binary(other, Op::MatMul(self.id, other.id), out))
    }

    /// Element-wise sum; `other` may be a row vector, column vector, or 1x1.
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        let mode = bcast_mode(&a, &b, "add")?;
        let out = broadcast_zip(&a, &b, mode, |x, y| x + y);
        Ok(self.binary(other, Op::Add(self.id, other.id, mode), out))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        let mode = bcast_mode(&a, &b, "sub")?;
        let out = broadcast_zip(&a, &b, mode, |x, y| x - y);
        Ok(self.binary(other, Op::Sub(self.id, other.id, mode), out))
    }

    /// Element-wise product with the same broadcasting rules as [`Var::add`].
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        let mode = bcast_mode(&a, &b, "mul")?;
        let out = broadcast_zip(&a, &b, mode, |x, y| x * y);
        Ok(self.binary(other, Op::Mul(self.id, other.id, mode), out))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let out = self.value().scale(s);
        self.unary(Op::Scale(self.id, s), out)
    }

    pub fn relu(&self) -> Var<'t, T> {
        let out = self.value().map(|x| x.max(T::zero()));
        self.unary(Op::Relu(self.id), out)
    }

    pub fn leaky_relu(&self, slope: T) -> Result<Var<'t, T>> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::Config(format!("leaky relu slope {slope} outside (0, 1)")));
        }
        let out = self.value().map(|x| if x >= T::zero() { x } else { x * slope });
        Ok(self.unary(Op::LeakyRelu(self.id, slope), out))
    }

    pub fn transpose(&self) -> Var<'t, T> {
        let out = self.value().transpose();
        self.unary(Op::Transpose(self.id), out)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let out = self.value().slice_rows(start, end)?;
        Ok(self.unary(Op::SliceRows(self.id, start), out))
    }

    pub fn gather_rows(&self, idx: impl Into<Rc<[usize]>>) -> Result<Var<'t, T>> {
        let idx = idx.into();
        let out = self.value().gather_rows(&idx)?;
        Ok(self.unary(Op::GatherRows(self.id, idx), out))
    }

    /// Output row `i` is the sum of the rows of `self` whose target is `i`.
    pub fn scatter_add_rows(&self, targets: impl Into<Rc<[usize]>>, num_rows: usize) -> Result<Var<'t, T>> {
        let targets = targets.into();
        let x = self.value();
        if targets.len() != x.rows() {
            return Err(Error::shape(format!(
                "scatter_add_rows: {} targets for {} message rows",
                targets.len(),
                x.rows()
            )));
        }
        let mut out = Tensor::zeros(num_rows, x.cols());
        for (k, &t) in targets.iter().enumerate() {
            if t >= num_rows {
                return Err(Error::Index(format!("scatter target {t} out of {num_rows} rows")));
            }
            for (o, &v) in out.row_mut(t).iter_mut().zip(x.row(k)) {
                *o += v;
            }
        }
        Ok(self.unary(Op::ScatterAddRows(self.id, targets), out))
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        if !x.is_finite() {
            return Err(Error::Numeric("softmax_rows input contains NaN or infinity".into()));
        }
        let out = softmax_rows_raw(&x);
        Ok(self.unary(Op::SoftmaxRows(self.id), out))
    }

    /// Scales each row to unit Euclidean norm (rows with norm below `eps` are divided by `eps`).
    pub fn l2_normalize_rows(&self, eps: T) -> Var<'t, T> {
        let x = self.value();
        let mut out = (*x).clone();
        for r in 0..x.rows() {
            let norm = x.row(r).iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
        }
        self.unary(Op::L2NormalizeRows(self.id, eps), out)
    }

    pub fn sum(&self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(Op::SumAll(self.id), out)
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = self.value().len().max(1);
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// Per-row sums as an `n x 1` column.
    pub fn sum_cols(&self) -> Var<'t, T> {
        let x = self.value();
        let sums: Vec<T> = (0..x.rows()).map(|r| x.row(r).iter().copied().sum()).collect();
        self.unary(Op::SumCols(self.id), Tensor::column(&sums))
    }

    /// Mean over rows of `-log softmax(self)[label]`.
    pub fn cross_entropy(&self, labels: impl Into<Rc<[usize]>>) -> Result<Var<'t, T>> {
        let labels = labels.into();
        let x = self.value();
        if labels.len() != x.rows() {
            return Err(Error::shape(format!("cross_entropy: {} labels for {} rows", labels.len(), x.rows())));
        }
        if labels.is_empty() {
            return Err(Error::shape("cross_entropy over zero rows"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= x.cols()) {
            return Err(Error::Index(format!("label {bad} out of {} classes", x.cols())));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("cross_entropy logits contain NaN or infinity".into()));
        }
        let probs = softmax_rows_raw(&x);
        let mut total = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[y];
        }
        let loss = total / T::of(labels.len() as f64);
        Ok(self.unary(Op::CrossEntropy(self.id, Rc::new(probs), labels), Tensor::scalar(loss)))
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against 0/1 targets.
    pub fn bce_with_logits(&self, targets: impl Into<Rc<[T]>>) -> Result<Var<'t, T>> {
        let targets = targets.into();
        let x = self.value();
        if targets.len() != x.len() || targets.is_empty() {
            return Err(Error::shape(format!("bce_with_logits: {} targets for {} logits", targets.len(), x.len())));
        }
        let total: T = x
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(&xi, &yi)| xi.max(T::zero()) - xi * yi + (T::one() + (-xi.abs()).exp()).ln())
            .sum();
        let loss = total / T::of(targets.len() as f64);
        Ok(self.unary(Op::BceWithLogits(self.id, targets), Tensor::scalar(loss)))
    }

    /// Row `i` of the `N x M` result is `Σ_k coeff_k · softmax(leaky(self_i + other_j))`
    /// over the entries `k = (i, j)` of `index`. Per-entry scores are never
    /// stored; the backward pass recomputes them.
    pub fn edge_softmax_aggregate(&self, other: &Var<'t, T>, index: &EntryIndex<T>, slope: T) -> Result<Var<'t, T>> {
        self.tape.check(other)?;
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::Config(format!("leaky relu slope {slope} outside (0, 1)")));
        }
        let (a, b) = (self.value(), other.value());
        let (n, m) = a.shape();
        if b.shape() != (n, m) || n != index.num_nodes {
            return Err(Error::shape(format!(
                "edge_softmax_aggregate: halves {n}x{m} and {}x{} for {} nodes",
                b.rows(),
                b.cols(),
                index.num_nodes
            )));
        }
        let e = index.rows.len();
        if index.cols.len() != e || index.coeffs.len() != e {
            return Err(Error::shape("edge_softmax_aggregate: entry rows, cols and coefficients differ in length"));
        }
        if let Some(&bad) = index.rows.iter().chain(index.cols.iter()).find(|&&v| v >= n) {
            return Err(Error::Index(format!("entry endpoint {bad} out of {n} nodes")));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Numeric("edge_softmax_aggregate input contains NaN or infinity".into()));
        }
        let mut out = Tensor::zeros(n, m);
        let mut s = vec![T::zero(); m];
        let factors = SoftmaxFactors::new(&a, &b, slope);
        for (k, (&i, &j)) in index.rows.iter().zip(index.cols.iter()).enumerate() {
            factors.scores(&a, &b, i, j, slope, &mut s);
            let c = index.coeffs[k];
            for (o, &v) in out.row_mut(i).iter_mut().zip(&s) {
                *o += v * c;
            }
        }
        Ok(self.binary(other, Op::EdgeSoftmax(self.id, other.id, index.clone(), slope), out))
    }
}
