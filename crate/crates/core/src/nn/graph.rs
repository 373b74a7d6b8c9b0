//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! Node ids are handed out in creation order, so walking them backwards is
//! a valid reverse topological order. Parameters are borrowed from a
//! [`ParamStore`] and never copied; [`Graph::backward`] returns a
//! [`Gradients`] value that the caller accumulates into the store.

use rand::Rng;

use super::ops::{self, NormCache};
use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Elu(NodeId),
    Tanh(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        cache: NormCache,
    },
    Dropout(NodeId, Vec<f64>),
    ConcatCols(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    GatherCols(NodeId, Vec<usize>),
    ScatterCols(NodeId, Vec<usize>),
    Reshape(NodeId),
    SoftmaxRows(NodeId),
    CrossEntropyRows(NodeId, Vec<usize>),
    Sum(NodeId),
}

struct Node {
    op: Op,
    // None for parameter leaves, which read through to the store
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(p), None) => &self.params.get(*p).value,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value: Some(value) });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let mut v = self.value(x).clone();
        ops::add_row_bias(&mut v, self.value(b))?;
        Ok(self.push(Op::AddBias(x, b), v))
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut v = self.value(x).clone();
        v.scale(factor);
        self.push(Op::Scale(x, factor), v)
    }

    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::elu(self.value(x))?;
        Ok(self.push(Op::Elu(x), v))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (v, cache) = ops::layer_norm_with_cache(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, cache }, v))
    }

    /// Inverted dropout. Pass `None` for the rng at inference, which makes
    /// this node an identity.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, rate: f64, rng: Option<&mut R>) -> Result<NodeId> {
        ops::check_dropout_rate(rate)?;
        let mask = match rng {
            Some(rng) if rate > 0.0 => ops::dropout_mask(self.value(x).len(), rate, rng),
            _ => vec![1.0; self.value(x).len()],
        };
        let mut v = self.value(x).clone();
        for (e, m) in v.data_mut().iter_mut().zip(&mask) {
            *e *= m;
        }
        Ok(self.push(Op::Dropout(x, mask), v))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::Shape(format!("concat {:?} with {:?}", va.shape(), vb.shape())));
        }
        let (ca, cb) = (va.cols(), vb.cols());
        let mut data = Vec::with_capacity(va.rows() * (ca + cb));
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let v = Tensor::matrix(va.rows(), ca + cb, data)?;
        Ok(self.push(Op::ConcatCols(a, b), v))
    }

    /// Row lookup (embedding table access).
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::InvalidArgument(format!("row {i} of a {}-row table", t.rows())));
            }
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::matrix(indices.len(), c, data)?;
        Ok(self.push(Op::GatherRows(table, indices.to_vec()), v))
    }

    /// Picks columns of a `1 × w` row vector.
    pub fn gather_cols(&mut self, x: NodeId, positions: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        if v.rows() != 1 || positions.iter().any(|&p| p >= v.cols()) {
            return Err(Error::Shape(format!("gather_cols on {:?}", v.shape())));
        }
        let data = positions.iter().map(|&p| v.data()[p]).collect();
        let out = Tensor::matrix(1, positions.len(), data)?;
        Ok(self.push(Op::GatherCols(x, positions.to_vec()), out))
    }

    /// Places a `1 × r` row vector at `positions` of a `1 × width` row; every
    /// other entry is `-inf`, so a following softmax gives it weight 0.
    pub fn scatter_cols_masked(&mut self, x: NodeId, positions: &[usize], width: usize) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != positions.len() || positions.iter().any(|&p| p >= width) {
            return Err(Error::Shape(format!("scatter {:?} into width {width}", v.shape())));
        }
        let mut data = vec![f64::NEG_INFINITY; width];
        for (&p, &e) in positions.iter().zip(v.data()) {
            data[p] = e;
        }
        let out = Tensor::matrix(1, width, data)?;
        Ok(self.push(Op::ScatterCols(x, positions.to_vec()), out))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let mut v = self.value(x).clone();
        ops::softmax_rows_in_place(&mut v)?;
        Ok(self.push(Op::SoftmaxRows(x), v))
    }

    /// Mean negative log-likelihood of `labels` under the rows of `probs`.
    pub fn cross_entropy_rows(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let p = self.value(probs);
        if p.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for {:?} probabilities",
                labels.len(),
                p.shape()
            )));
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            total += ops::cross_entropy(&Tensor::vector(p.row(r).to_vec()), label)?;
        }
        let v = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(Op::CrossEntropyRows(probs, labels.to_vec()), v))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    /// Back-propagates from the scalar `loss` and returns the gradient of
    /// every parameter in the store.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(p) => out.per_param[p.0].add_assign(&g)?,
                Op::MatMul(a, b) => {
                    let da = g.matmul_transposed(self.value(*b))?;
                    let db = self.value(*a).transposed_matmul(&g)?;
                    accumulate(&mut grads, *a, da.reshaped(self.value(*a).shape())?)?;
                    accumulate(&mut grads, *b, db.reshaped(self.value(*b).shape())?)?;
                }
                Op::AddBias(x, b) => {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    let db = Tensor::new(self.value(*b).shape().to_vec(), db)?;
                    accumulate(&mut grads, *b, db)?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Scale(x, f) => {
                    let mut g = g;
                    g.scale(*f);
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Elu(x) => {
                    let input = self.value(*x);
                    let mut g = g;
                    for (d, &v) in g.data_mut().iter_mut().zip(input.data()) {
                        *d *= ops::elu_derivative(v);
                    }
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Tanh(x) => {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    let mut g = g;
                    for (d, &t) in g.data_mut().iter_mut().zip(y.data()) {
                        *d *= 1.0 - t * t;
                    }
                    accumulate(&mut grads, *x, g)?;
                }
                Op::LayerNorm { x, gain, bias, cache } => {
                    let (dx, dgain, dbias) = layer_norm_backward(&g, self.value(*gain), cache)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *gain, dgain)?;
                    accumulate(&mut grads, *bias, dbias)?;
                }
                Op::Dropout(x, mask) => {
                    let mut g = g;
                    for (d, m) in g.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, g)?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut da = Vec::with_capacity(g.rows() * ca);
                    let mut db = Vec::with_capacity(g.rows() * cb);
                    for r in 0..g.rows() {
                        let row = g.row(r);
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(self.value(*a).shape().to_vec(), da)?)?;
                    accumulate(&mut grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?)?;
                }
                Op::GatherRows(table, indices) => {
                    let mut dt = Tensor::zeros(self.value(*table).shape());
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, v) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt)?;
                }
                Op::GatherCols(x, positions) => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (&p, &v) in positions.iter().zip(g.data()) {
                        dx.data_mut()[p] += v;
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::ScatterCols(x, positions) => {
                    let data = positions.iter().map(|&p| g.data()[p]).collect();
                    accumulate(&mut grads, *x, Tensor::new(self.value(*x).shape().to_vec(), data)?)?;
                }
                Op::Reshape(x) => {
                    let g = g.reshaped(self.value(*x).shape())?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::SoftmaxRows(x) => {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    let mut dx = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::CrossEntropyRows(probs, labels) => {
                    let p = self.value(*probs);
                    let upstream = g.data()[0] / labels.len() as f64;
                    let mut dp = Tensor::zeros(p.shape());
                    let c = p.cols();
                    for (r, &label) in labels.iter().enumerate() {
                        let q = p.data()[r * c + label];
                        if q > ops::PROB_FLOOR {
                            dp.data_mut()[r * c + label] = -upstream / q;
                        }
                    }
                    accumulate(&mut grads, *probs, dp)?;
                }
                Op::Sum(x) => {
                    let dx = Tensor::filled(self.value(*x).shape(), g.data()[0]);
                    accumulate(&mut grads, *x, dx)?;
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn layer_norm_backward(g: &Tensor, gain: &Tensor, cache: &NormCache) -> Result<(Tensor, Tensor, Tensor)> {
    let d = g.cols();
    let n = d as f64;
    let mut dx = Tensor::zeros(g.shape());
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..g.rows() {
        let gr = g.row(r);
        let xh = cache.normalized.row(r);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..d {
            dgain[j] += gr[j] * xh[j];
            dbias[j] += gr[j];
            dxhat[j] = gr[j] * gain.data()[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xh[j];
        }
        let inv = cache.inv_std[r];
        for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = inv / n * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
        }
    }
    Ok((
        dx,
        Tensor::new(gain.shape().to_vec(), dgain)?,
        Tensor::new(gain.shape().to_vec(), dbias)?,
    ))
}
