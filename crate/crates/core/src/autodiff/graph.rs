//! Dynamic tape for reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! the backward pass is a single reverse sweep.

use rand::Rng;

use super::kernels::{self, axis_split};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<F> {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Embedding { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax { x: Var, axis: usize },
    Relu(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Dropout { x: Var, mask: Vec<F> },
    Sum(Var),
    WeightedNll { logits: Var, targets: Vec<usize>, weights: Vec<f64> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records tensor operations for one forward pass.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Broadcast rule for elementwise binary ops: `b`'s shape must equal `a`'s
/// or be a trailing suffix of it.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Smallest `|x|` over every input to a relu on the tape, or `None` if
    /// the tape has no relu. Finite-difference checks are only meaningful
    /// when this exceeds the perturbation's effect on those inputs.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).data().iter().fold(f64::INFINITY, |m, v| m.min(v.to_acc().abs()))),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// A tensor that receives no gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A differentiable input whose gradient can be read back after
    /// [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Places a parameter on the tape.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::from_parts(vec![m, n], data);
        check_finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Elementwise `a + b`, with `b` broadcast over `a`'s leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y).map(|out| {
            let rg = self.rg(a) || self.rg(b);
            self.push(out, Op::Add(a, b), rg)
        })
    }

    /// Elementwise `a * b`, with `b` broadcast over `a`'s leading axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y).map(|out| {
            let rg = self.rg(a) || self.rg(b);
            self.push(out, Op::Mul(a, b), rg)
        })
    }

    fn binary(&self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcast_ok(ta.shape(), tb.shape()) {
            return Err(Error::dim(op, format!("{:?} with {:?}", ta.shape(), tb.shape())));
        }
        let n = tb.len();
        let data =
            ta.data().chunks_exact(n).flat_map(|chunk| chunk.iter().zip(tb.data()).map(|(&x, &y)| f(x, y))).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        check_finite(op, &out)?;
        Ok(out)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| v * c).collect());
        check_finite("scale", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    /// Gathers rows of a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::dim("embedding", format!("table shape {:?}", t.shape())));
        }
        if ids.is_empty() {
            return Err(Error::dim("embedding", "no ids"));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocab { id, size: v });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Normalizes the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(t.rows());
        for row in t.data().chunks_exact(n) {
            let mean = row.iter().map(|v| v.to_acc()).sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v.to_acc() - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|v| F::from_acc((v.to_acc() - mean) * is)));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        check_finite("layer_norm", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(Error::dim("softmax", format!("axis {axis} for shape {:?}", t.shape())));
        }
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut data = vec![F::zero(); t.len()];
        let mut line = vec![F::zero(); n];
        let mut probs = vec![0f64; n];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for j in 0..n {
                    line[j] = src[base + j * inner];
                }
                kernels::softmax_row(&line, &mut probs);
                for j in 0..n {
                    data[base + j * inner] = F::from_acc(probs[j]);
                }
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        check_finite("softmax", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect(),
        );
        let rg = self.rg(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let span = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * span..(o + 1) * span]);
            }
        }
        let out = Tensor::from_parts(shape, data);
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, n, inner) = axis_split(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&t.data()[from..from + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Narrow { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::dim("transpose", format!("{:?} is not a matrix", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let out = Tensor::from_parts(vec![c, r], kernels::transpose(t.data(), r, c));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() || shape.contains(&0) {
            return Err(Error::dim("reshape", format!("{:?} to {shape:?}", t.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout rate {p} must be < 1")));
        }
        let keep = F::from_acc(1.0 / (1.0 - p));
        let t = self.value(x);
        let mask: Vec<F> = (0..t.len()).map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep }).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_acc()).sum();
        let out = Tensor::scalar(F::from_acc(s));
        check_finite("sum", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    /// `Σ_r w_r · (−log softmax(logits_r)[target_r])` over the rows of an
    /// `[N, K]` logit matrix. Rows with weight zero contribute nothing; the
    /// weights are constants.
    pub fn weighted_nll(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.shape()[0] != targets.len() || targets.len() != weights.len() {
            return Err(Error::dim(
                "weighted_nll",
                format!("logits {:?}, {} targets, {} weights", t.shape(), targets.len(), weights.len()),
            ));
        }
        let k = t.shape()[1];
        let mut total = 0f64;
        for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            if y >= k {
                return Err(Error::dim("weighted_nll", format!("label {y} with {k} classes")));
            }
            let row = t.row(r);
            total += w * (kernels::log_sum_exp(row) - row[y].to_acc());
        }
        let out = Tensor::scalar(F::from_acc(total));
        check_finite("weighted_nll", &out)?;
        let rg = self.rg(logits);
        Ok(self.push(out, Op::WeightedNll { logits, targets: targets.to_vec(), weights: weights.to_vec() }, rg))
    }

    /// Mean cross-entropy over unmasked rows of `[N, K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
        if labels.len() != mask.len() {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels with {} mask entries", labels.len(), mask.len()),
            ));
        }
        let m = mask.iter().filter(|&&b| b).count();
        if m == 0 {
            return Err(Error::EmptyLoss);
        }
        let w = 1.0 / m as f64;
        let weights: Vec<f64> = mask.iter().map(|&b| if b { w } else { 0.0 }).collect();
        self.weighted_nll(logits, labels, &weights)
    }

    /// Propagates gradients from the scalar `loss` back to every leaf and
    /// parameter. The graph cannot be differentiated again afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Backward<F>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(self.shape(loss).to_vec(), vec![F::one()]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                params.push((id, Var(i)));
            }
        }
        Ok(Backward { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let da = kernels::matmul_bt(g.data(), tb.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.rg(*b) {
                    let db = kernels::matmul_at(ta.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    let tb = self.value(*b);
                    let db = reduce_to_suffix(g.data(), tb.len());
                    self.accumulate(grads, *b, Tensor::from_parts(tb.shape().to_vec(), db));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = tb.len();
                if self.rg(*a) {
                    let da =
                        g.data().chunks_exact(n).flat_map(|c| c.iter().zip(tb.data()).map(|(&x, &y)| x * y)).collect();
                    self.accumulate(grads, *a, Tensor::from_parts(ta.shape().to_vec(), da));
                }
                if self.rg(*b) {
                    let prod: Vec<F> = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    let db = reduce_to_suffix(&prod, n);
                    self.accumulate(grads, *b, Tensor::from_parts(tb.shape().to_vec(), db));
                }
            }
            Op::Scale(x, c) => {
                let dx = g.data().iter().map(|&v| v * *c).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let d = tt.shape()[1];
                let mut acc = vec![0f64; tt.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (a, v) in acc[id * d..(id + 1) * d].iter_mut().zip(g.row(r)) {
                        *a += v.to_acc();
                    }
                }
                let dt = acc.into_iter().map(F::from_acc).collect();
                self.accumulate(grads, *table, Tensor::from_parts(tt.shape().to_vec(), dt));
            }
            Op::LayerNorm { x, inv_std } => {
                let n = out.last_dim();
                let mut dx = Vec::with_capacity(out.len());
                for ((y, dy), &is) in out.data().chunks_exact(n).zip(g.data().chunks_exact(n)).zip(inv_std) {
                    let mean_dy = dy.iter().map(|v| v.to_acc()).sum::<f64>() / n as f64;
                    let mean_dyy = dy.iter().zip(y).map(|(a, b)| a.to_acc() * b.to_acc()).sum::<f64>() / n as f64;
                    dx.extend(
                        dy.iter().zip(y).map(|(a, b)| F::from_acc(is * (a.to_acc() - mean_dy - b.to_acc() * mean_dyy))),
                    );
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), dx));
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let (y, dy) = (out.data(), g.data());
                let mut dx = vec![F::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let s: f64 = (0..n).map(|j| y[base + j * inner].to_acc() * dy[base + j * inner].to_acc()).sum();
                        for j in 0..n {
                            let p = base + j * inner;
                            dx[p] = F::from_acc(y[p].to_acc() * (dy[p].to_acc() - s));
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), dx));
            }
            Op::Relu(x) => {
                let dx =
                    g.data().iter().zip(out.data()).map(|(&d, &y)| if y > F::zero() { d } else { F::zero() }).collect();
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), dx));
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(out.shape(), *axis);
                let mut parts: Vec<Vec<F>> = inputs.iter().map(|v| Vec::with_capacity(self.value(*v).len())).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (part, v) in parts.iter_mut().zip(inputs) {
                        let span = self.shape(*v)[*axis] * inner;
                        part.extend_from_slice(&g.data()[offset..offset + span]);
                        offset += span;
                    }
                }
                for (part, v) in parts.into_iter().zip(inputs) {
                    let shape = self.shape(*v).to_vec();
                    self.accumulate(grads, *v, Tensor::from_parts(shape, part));
                }
            }
            Op::Narrow { x, axis, start } => {
                let src_shape = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_split(&src_shape, *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![F::zero(); src_shape.iter().product()];
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    let from = o * len * inner;
                    dx[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(src_shape, dx));
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let dx = kernels::transpose(g.data(), r, c);
                self.accumulate(grads, *x, Tensor::from_parts(vec![c, r], dx));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::Dropout { x, mask } => {
                let dx = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), dx));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                let up = g.data()[0];
                self.accumulate(grads, *x, Tensor::filled(&shape, up));
            }
            Op::WeightedNll { logits, targets, weights } => {
                let tl = self.value(*logits);
                let k = tl.shape()[1];
                let up = g.data()[0].to_acc();
                let mut dx = vec![F::zero(); tl.len()];
                let mut probs = vec![0f64; k];
                for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    kernels::softmax_row(tl.row(r), &mut probs);
                    let scale = up * w;
                    for (j, &p) in probs.iter().enumerate() {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        dx[r * k + j] = F::from_acc(scale * (p - onehot));
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_parts(tl.shape().to_vec(), dx));
            }
        }
        Ok(())
    }
}

/// Sums `data` over leading repetitions of an `n`-element suffix block.
fn reduce_to_suffix<F: Scalar>(data: &[F], n: usize) -> Vec<F> {
    let mut acc = vec![0f64; n];
    for chunk in data.chunks_exact(n) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += v.to_acc();
        }
    }
    acc.into_iter().map(F::from_acc).collect()
}

/// Result of a backward pass.
pub struct Backward<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Scalar> Backward<F> {
    /// Gradient with respect to any node, `None` if it received none.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    /// Collects parameter gradients. Parameters placed on the tape but not
    /// reached from the loss get zero gradients; parameters never placed on
    /// the tape stay `None`.
    pub fn into_gradients(mut self, store: &ParamStore<F>) -> Gradients<F> {
        let mut out = Gradients::empty_for(store);
        for (id, var) in &self.params {
            let g = self.grads[var.0].take().unwrap_or_else(|| Tensor::zeros(store.get(*id).shape()));
            match &mut out.grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        out
    }
}
