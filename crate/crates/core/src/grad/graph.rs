//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation reads nodes that
//! already exist, so the tape is topologically ordered by construction and the
//! backward sweep is a single reverse pass over it.

use std::collections::BTreeMap;

use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sech2(Var),
    Relu(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Columns(Var, usize),
    Concat(Vec<Var>),
    SoftmaxGroups(Var, usize),
    SumColumns(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Gradients of a scalar loss, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    inner: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.inner.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.inner.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.inner.insert(name, grad);
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.inner.get_mut(name)
    }

    /// Gradients whose names start with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Gradients {
        let inner = self
            .inner
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        Gradients { inner }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that carries no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false, None)
    }

    /// A named trainable leaf; `backward` reports its gradient under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true, Some(name.into()))
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad, None)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (ta.dims2(), tb.dims2());
        if tb.shape().len() != 2 || k != k2 {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let value = Tensor::from_parts(vec![n, m], matmul(ta.data(), tb.data(), n, k, m));
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds the vector `bias` (length = cols) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (n, m) = tx.dims2();
        if tb.len() != m {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x·W + b` for `x: [batch, n_in]`, `W: [n_in, n_out]`, `b: [n_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Multiplies every element of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(Error::shape("scale_by", format!("scale must hold one value, got {:?}", ts.shape())));
        }
        let c = ts.item();
        let value = self.value(a).map(|x| c * x);
        Ok(self.push(value, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    /// `1 − tanh²(x)`, without the cancellation of computing it from `tanh`.
    pub fn sech2(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sech2(a), sech2)
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = ta.dims2();
        if len == 0 || start + len > m {
            return Err(Error::shape("columns", format!("{start}..{} of {m} columns", start + len)));
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let value = Tensor::from_parts(vec![n, len], data);
        Ok(self.push(value, Op::Columns(a, start), &[a]))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "nothing to concatenate"));
        };
        let n = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let m: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(n * m);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Per-row softmax across `groups` equal column blocks.
    ///
    /// Column `k·w + i` is entry `i` of block `k`; for each row and each `i`
    /// the `groups` entries `{k·w + i}` are normalized to sum to one.
    pub fn softmax_groups(&mut self, a: Var, groups: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = ta.dims2();
        if groups == 0 || m % groups != 0 {
            return Err(Error::shape("softmax_groups", format!("{m} columns into {groups} groups")));
        }
        let w = m / groups;
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            let x = ta.row_slice(r);
            let out = &mut data[r * m..(r + 1) * m];
            for i in 0..w {
                let max = (0..groups).map(|k| x[k * w + i]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..groups {
                    let e = (x[k * w + i] - max).exp();
                    out[k * w + i] = e;
                    total += e;
                }
                for k in 0..groups {
                    out[k * w + i] /= total;
                }
            }
        }
        let value = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(value, Op::SoftmaxGroups(a, groups), &[a]))
    }

    /// Row sums: `[n, m] → [n, 1]`.
    pub fn sum_columns(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (n, _) = ta.dims2();
        let data = (0..n).map(|r| ta.row_slice(r).iter().sum()).collect();
        let value = Tensor::from_parts(vec![n, 1], data);
        self.push(value, Op::SumColumns(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let value = Tensor::scalar(ta.data().iter().sum::<f64>() / ta.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    /// Smallest distance of any recorded ReLU input, clamp input or `min`
    /// pair from a point where the tape is not differentiable.
    ///
    /// Finite-difference checks only mean something when this exceeds the
    /// probe step.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => {
                    for &x in self.value(a).data() {
                        margin = margin.min(x.abs());
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    for &x in self.value(a).data() {
                        margin = margin.min((x - lo).abs()).min((x - hi).abs());
                    }
                }
                Op::Min(a, b) => {
                    for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
                        margin = margin.min((x - y).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                        match out.inner.get_mut(name) {
                            Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                            None => {
                                out.inner.insert(name.clone(), t);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((n, k), (_, m)) = (ta.dims2(), tb.dims2());
                    if self.requires_grad(*a) {
                        self.accumulate(&mut grads, *a, matmul_bt(&g, tb.data(), n, k, m));
                    }
                    if self.requires_grad(*b) {
                        self.accumulate(&mut grads, *b, matmul_at(ta.data(), &g, n, k, m));
                    }
                }
                Op::AddBias(x, b) => {
                    if self.requires_grad(*b) {
                        let m = self.value(*b).len();
                        let mut gb = vec![0.0; m];
                        for row in g.chunks(m) {
                            gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                        self.accumulate(&mut grads, *b, gb);
                    }
                    if self.requires_grad(*x) {
                        self.accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*b) {
                        self.accumulate(&mut grads, *b, g.clone());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.requires_grad(*b) {
                        self.accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    if self.requires_grad(*a) {
                        self.accumulate(&mut grads, *a, zip_map(&g, tb, |g, y| g * y));
                    }
                    if self.requires_grad(*b) {
                        self.accumulate(&mut grads, *b, zip_map(&g, ta, |g, x| g * x));
                    }
                }
                Op::Div(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    if self.requires_grad(*a) {
                        self.accumulate(&mut grads, *a, zip_map(&g, tb, |g, y| g / y));
                    }
                    if self.requires_grad(*b) {
                        let gb = g.iter().zip(ta).zip(tb).map(|((g, x), y)| -g * x / (y * y)).collect();
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Min(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let pick_a: Vec<bool> = ta.iter().zip(tb).map(|(x, y)| x <= y).collect();
                    if self.requires_grad(*a) {
                        let ga = g.iter().zip(&pick_a).map(|(g, &p)| if p { *g } else { 0.0 }).collect();
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = g.iter().zip(&pick_a).map(|(g, &p)| if p { 0.0 } else { *g }).collect();
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.accumulate(&mut grads, *a, g.iter().map(|v| c * v).collect());
                }
                Op::AddScalar(a) => self.accumulate(&mut grads, *a, g),
                Op::ScaleBy(a, s) => {
                    let c = self.value(*s).item();
                    if self.requires_grad(*s) {
                        let gs = g.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                        self.accumulate(&mut grads, *s, vec![gs]);
                    }
                    if self.requires_grad(*a) {
                        self.accumulate(&mut grads, *a, g.iter().map(|v| c * v).collect());
                    }
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    self.accumulate(&mut grads, *a, zip_map(&g, y, |g, y| g * y));
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    self.accumulate(&mut grads, *a, zip_map(&g, x, |g, x| g / x));
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    self.accumulate(&mut grads, *a, zip_map(&g, y, |g, y| g * (1.0 - y * y)));
                }
                Op::Sech2(a) => {
                    let (x, y) = (self.value(*a).data(), node.value.data());
                    let ga = g.iter().zip(x).zip(y).map(|((g, x), y)| -2.0 * g * y * x.tanh()).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    self.accumulate(&mut grads, *a, zip_map(&g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Square(a) => {
                    let x = self.value(*a).data();
                    self.accumulate(&mut grads, *a, zip_map(&g, x, |g, x| 2.0 * g * x));
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let x = self.value(*a).data();
                    let ga = zip_map(&g, x, |g, x| if x > lo && x < hi { g } else { 0.0 });
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Columns(a, start) => {
                    let (n, m) = self.value(*a).dims2();
                    let len = node.value.cols();
                    let mut ga = vec![0.0; n * m];
                    for r in 0..n {
                        ga[r * m + start..r * m + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let (n, m) = node.value.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.requires_grad(p) {
                            let mut gp = Vec::with_capacity(n * w);
                            for r in 0..n {
                                gp.extend_from_slice(&g[r * m + offset..r * m + offset + w]);
                            }
                            self.accumulate(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::SoftmaxGroups(a, groups) => {
                    let y = node.value.data();
                    let (n, m) = node.value.dims2();
                    let w = m / groups;
                    let mut ga = vec![0.0; n * m];
                    for r in 0..n {
                        let base = r * m;
                        for i in 0..w {
                            let dot: f64 = (0..*groups).map(|k| g[base + k * w + i] * y[base + k * w + i]).sum();
                            for k in 0..*groups {
                                let j = base + k * w + i;
                                ga[j] = y[j] * (g[j] - dot);
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SumColumns(a) => {
                    let (n, m) = self.value(*a).dims2();
                    let mut ga = Vec::with_capacity(n * m);
                    for gr in &g {
                        ga.extend(std::iter::repeat_n(*gr, m));
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    self.accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

pub(crate) fn sech2(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_forward_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 2.0]]));
        let w = g.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.constant(Tensor::vector(&[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.constant(t(&[&[0.0, 0.0]]));
        let w = g.constant(t(&[&[0.3, -7.0], &[2.5, 1.0]]));
        let b = g.constant(Tensor::vector(&[3.0, -1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let x = g.constant(t(&[&[1.0, 1.0]]));
        let w = g.constant(t(&[&[1.0, 0.0], &[0.0, 2.0]]));
        let b = g.constant(Tensor::vector(&[1.0, 1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0]);
    }

    #[test]
    fn linear_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 2.0, 3.0]]));
        let w = g.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.constant(Tensor::vector(&[0.0, 0.0]));
        assert!(matches!(g.linear(x, w, b), Err(Error::Shape { .. })));
        let x = g.constant(t(&[&[1.0, 2.0]]));
        let b3 = g.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
        assert!(g.linear(x, w, b3).is_err());
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(&[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[-3.0, -0.5, -1e-9]));
        let y = g.relu(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(&[-1.0, 2.0]));
        let y = g.relu(x);
        let s = g.sum(y);
        assert_eq!(g.backward(s).unwrap().get("x").unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_trivial_cases() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(&[0.5, -2.0, 7.0]));
        let s = g.sum(x);
        assert_eq!(g.backward(s).unwrap().get("x").unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let sq = g.square(x);
        let half = g.scale(sq, 0.5);
        assert_eq!(g.backward(half).unwrap().get("x").unwrap().data(), &[3.0]);
    }

    #[test]
    fn sech2_keeps_precision_when_saturated() {
        for x in [-3.0, -0.4, 0.0, 1.1, 5.0] {
            let t: f64 = f64::tanh(x);
            assert!((sech2(x) - (1.0 - t * t)).abs() < 1e-15);
        }
        let far = sech2(25.0);
        assert!(far > 0.0 && (far / (4.0 * (-50.0f64).exp()) - 1.0).abs() < 1e-12);
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(&[0.7, -20.0]));
        let y = g.sech2(x);
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let d = grads.get("x").unwrap().data();
        let h = 1e-6;
        assert!((d[0] - (sech2(0.7 + h) - sech2(0.7 - h)) / (2.0 * h)).abs() < 1e-8);
        assert!(d[1] > 0.0 && d[1] < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(&[1.0, 2.0]));
        let y = g.exp(x);
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(&[1.0, 2.0]));
        let c = g.constant(Tensor::vector(&[3.0, 4.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads.get("x").unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0));
        let sq = g.square(x);
        let d = g.detach(sq);
        let y = g.mul(d, x).unwrap();
        let grads = g.backward(y).unwrap();
        // d/dx [stop(x²)·x] = x² = 4
        assert_eq!(grads.get("x").unwrap().data(), &[4.0]);
    }

    #[test]
    fn softmax_groups_normalizes_each_dimension() {
        let mut g = Graph::new();
        // K=2 groups of width 2: columns (k0 i0, k0 i1, k1 i0, k1 i1)
        let x = g.constant(t(&[&[0.0, 1.0, 0.0, 0.0]]));
        let y = g.softmax_groups(x, 2).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[2] - 0.5).abs() < 1e-15);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-15);
        assert!((v[1] - std::f64::consts::E / (std::f64::consts::E + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        assert_eq!(g.backward(z).unwrap().get("x").unwrap().data(), &[7.0]);
    }
}
