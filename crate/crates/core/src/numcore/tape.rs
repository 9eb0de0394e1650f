use std::rc::Rc;

use super::tensor::{matmul_raw, transpose_raw};
use super::{Grads, ParamId, ParamStore, Rng, Tensor};
use crate::{Error, Result};

/// Additive surrogate for `-inf` on masked softmax slots.
const MASK_FILL: f64 = -1e30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Tensor),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    LogClamped(Var, f64),
    Sum(Var),
    SumSquares(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    GatherFlat(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SoftmaxMasked(Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    EdgeAggregate { weights: Var, feats: Var, receivers: Rc<[usize]>, senders: Rc<[usize]> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` only for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it once in reverse.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape { store, nodes: Vec::with_capacity(256) }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    /// Which side of every non-smooth point (relu, leaky relu, log clamp)
    /// each recorded input lies on. Two evaluations with equal patterns are
    /// on the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => out.extend(self.value(a).data().iter().map(|&x| x > 0.0)),
                Op::LogClamped(a, floor) => out.extend(self.value(a).data().iter().map(|&x| x > floor)),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims2();
        let out = Tensor::new(vec![c, r], transpose_raw(t.data(), r, c)).expect("same size");
        self.push(Op::Transpose(a), out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), out))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// Adds vector `b` (length `cols`) to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (_, cols) = ta.dims2();
        if tb.len() != cols {
            return Err(shape_err("add_row", ta, tb));
        }
        let bias = tb.data();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + bias[i % cols]).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow(a, b), out))
    }

    /// Elementwise product with a constant (masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != c.len() {
            return Err(shape_err("mul_const", ta, &c));
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::MulConst(a, c), out))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| scale * x + shift).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same size");
        self.push(Op::Affine(a, scale), out)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect()).expect("same size")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), out)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.map(a, |x| leaky_relu(x, slope));
        self.push(Op::LeakyRelu(a, slope), out)
    }

    /// `ln(max(a, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let out = self.map(a, |x| x.max(floor).ln());
        self.push(Op::LogClamped(a, floor), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Op::SumSquares(a), Tensor::scalar(s))
    }

    /// Column means of a matrix, as a `1 × cols` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (rows, cols) = ta.dims2();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, x) in out.iter_mut().zip(ta.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.max(1) as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Op::MeanRows(a), Tensor::new(vec![1, cols], out).expect("size"))
    }

    /// Row lookup (embedding tables).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Shape { op: "gather_rows", left: t.shape().to_vec(), right: vec![id] });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(Op::GatherRows(table, ids.to_vec()), out))
    }

    /// Picks elements by flat row-major index; result has shape `[idx.len()]`.
    pub fn gather_flat(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return Err(Error::Shape { op: "gather_flat", left: t.shape().to_vec(), right: vec![bad] });
        }
        let data: Vec<f64> = idx.iter().map(|&i| t.data()[i]).collect();
        Ok(self.push(Op::GatherFlat(a, idx), Tensor::vector(data)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        if start > end || end > rows {
            return Err(Error::Shape { op: "slice_rows", left: t.shape().to_vec(), right: vec![start, end] });
        }
        let out = Tensor::new(vec![end - start, cols], t.data()[start * cols..end * cols].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        if start > end || end > cols {
            return Err(Error::Shape { op: "slice_cols", left: t.shape().to_vec(), right: vec![start, end] });
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2();
            if c != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2().0;
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.dims2().0 != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            total += t.dims2().1;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Softmax over the unmasked entries of a flat score vector; masked
    /// entries come out exactly zero.
    pub fn softmax_masked(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let out = softmax_masked(self.value(scores).data(), mask)?;
        Ok(self.push(Op::SoftmaxMasked(scores), Tensor::vector(out)))
    }

    /// Independent softmax over each segment `offsets[i]..offsets[i + 1]` of a
    /// flat score vector. Empty segments are allowed and produce nothing.
    pub fn segment_softmax(&mut self, scores: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let s = self.value(scores).data();
        if offsets.last().copied() != Some(s.len()) {
            return Err(Error::Shape {
                op: "segment_softmax",
                left: vec![s.len()],
                right: vec![offsets.last().copied().unwrap_or(0)],
            });
        }
        let mut out = vec![0.0; s.len()];
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                continue;
            }
            let max = s[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in lo..hi {
                out[i] = (s[i] - max).exp();
                z += out[i];
            }
            for o in &mut out[lo..hi] {
                *o /= z;
            }
        }
        Ok(self.push(Op::SegmentSoftmax(scores, offsets), Tensor::vector(out)))
    }

    /// `out[receivers[e]] += weights[e] * feats[senders[e]]` over all edges;
    /// output has `n_out` rows.
    pub fn edge_aggregate(
        &mut self,
        weights: Var,
        feats: Var,
        receivers: Rc<[usize]>,
        senders: Rc<[usize]>,
        n_out: usize,
    ) -> Result<Var> {
        let (tw, tf) = (self.value(weights), self.value(feats));
        let (rows, cols) = tf.dims2();
        if tw.len() != receivers.len()
            || receivers.len() != senders.len()
            || senders.iter().any(|&s| s >= rows)
            || receivers.iter().any(|&r| r >= n_out)
        {
            return Err(shape_err("edge_aggregate", tw, tf));
        }
        let mut out = vec![0.0; n_out * cols];
        for (e, (&r, &s)) in receivers.iter().zip(senders.iter()).enumerate() {
            let w = tw.data()[e];
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (o, x) in dst.iter_mut().zip(tf.row(s)) {
                *o += w * x;
            }
        }
        let out = Tensor::new(vec![n_out, cols], out)?;
        Ok(self.push(Op::EdgeAggregate { weights, feats, receivers, senders }, out))
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`. Outside training,
    /// or with `rate == 0`, returns `a` itself.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.value(a).shape().to_vec();
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect();
        self.mul_const(a, Tensor::new(shape, mask)?)
    }

    /// Reverse pass from a scalar root; returns gradients for every parameter
    /// the root depends on. A parameter read several times accumulates.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_val.shape(), 1.0));
        let mut out = Grads { entries: vec![None; self.store.len()] };

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => match &mut out.entries[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let bt = transpose_raw(tb.data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    let at = transpose_raw(ta.data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
                Op::Transpose(a) => {
                    let (r, c) = g.dims2();
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, ta.shape(), transpose_raw(g.data(), r, c));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.into_data());
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.data().to_vec());
                    accumulate(&mut grads, *b, &shape, g.into_data());
                }
                Op::Sub(a, b) => {
                    let shape = g.shape().to_vec();
                    let neg = g.data().iter().map(|x| -x).collect();
                    accumulate(&mut grads, *a, &shape, g.into_data());
                    accumulate(&mut grads, *b, &shape, neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    let db = g.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
                Op::AddRow(a, b) => {
                    let tb = self.value(*b);
                    let cols = tb.len();
                    let mut db = vec![0.0; cols];
                    for (i, x) in g.data().iter().enumerate() {
                        db[i % cols] += x;
                    }
                    accumulate(&mut grads, *b, tb.shape(), db);
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.into_data());
                }
                Op::MulConst(a, c) => {
                    let da = g.data().iter().zip(c.data()).map(|(g, c)| g * c).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::Affine(a, scale) => {
                    let da = g.data().iter().map(|g| g * scale).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("value");
                    let da = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, y.shape(), da);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("value");
                    let da = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, y.shape(), da);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let da = g.data().iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, x.shape(), da);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let da =
                        g.data().iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { g * slope }).collect();
                    accumulate(&mut grads, *a, x.shape(), da);
                }
                Op::LogClamped(a, floor) => {
                    let x = self.value(*a);
                    let da =
                        g.data().iter().zip(x.data()).map(|(g, &x)| if x > *floor { g / x } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, x.shape(), da);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let gv = g.item();
                    accumulate(&mut grads, *a, x.shape(), vec![gv; x.len()]);
                }
                Op::SumSquares(a) => {
                    let x = self.value(*a);
                    let gv = g.item();
                    let da = x.data().iter().map(|x| 2.0 * gv * x).collect();
                    accumulate(&mut grads, *a, x.shape(), da);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let (rows, cols) = x.dims2();
                    let inv = 1.0 / rows.max(1) as f64;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            da[r * cols + c] = g.data()[c] * inv;
                        }
                    }
                    accumulate(&mut grads, *a, x.shape(), da);
                }
                Op::GatherRows(table, ids) => {
                    let t = self.value(*table);
                    let cols = t.dims2().1;
                    let mut dt = vec![0.0; t.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g.data()[r * cols..(r + 1) * cols];
                        for (d, s) in dt[id * cols..(id + 1) * cols].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *table, t.shape(), dt);
                }
                Op::GatherFlat(a, idx) => {
                    let t = self.value(*a);
                    let mut da = vec![0.0; t.len()];
                    for (e, &i) in idx.iter().enumerate() {
                        da[i] += g.data()[e];
                    }
                    accumulate(&mut grads, *a, t.shape(), da);
                }
                Op::SliceRows(a, start) => {
                    let t = self.value(*a);
                    let cols = t.dims2().1;
                    let mut da = vec![0.0; t.len()];
                    da[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, t.shape(), da);
                }
                Op::SliceCols(a, start) => {
                    let t = self.value(*a);
                    let (rows, cols) = t.dims2();
                    let width = g.dims2().1;
                    let mut da = vec![0.0; t.len()];
                    for r in 0..rows {
                        da[r * cols + start..r * cols + start + width]
                            .copy_from_slice(&g.data()[r * width..(r + 1) * width]);
                    }
                    accumulate(&mut grads, *a, t.shape(), da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let n = t.len();
                        accumulate(&mut grads, p, t.shape(), g.data()[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2();
                    let mut col = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let w = t.dims2().1;
                        let mut dp = Vec::with_capacity(t.len());
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + col..r * total + col + w]);
                        }
                        accumulate(&mut grads, p, t.shape(), dp);
                        col += w;
                    }
                }
                Op::SoftmaxMasked(a) => {
                    let y = node.value.as_ref().expect("value");
                    let da = softmax_backward(y.data(), g.data());
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::SegmentSoftmax(a, offsets) => {
                    let y = node.value.as_ref().expect("value");
                    let mut da = vec![0.0; y.len()];
                    for w in offsets.windows(2) {
                        let (lo, hi) = (w[0], w[1]);
                        da[lo..hi].copy_from_slice(&softmax_backward(&y.data()[lo..hi], &g.data()[lo..hi]));
                    }
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::EdgeAggregate { weights, feats, receivers, senders } => {
                    let (tw, tf) = (self.value(*weights), self.value(*feats));
                    let cols = tf.dims2().1;
                    let mut dw = vec![0.0; tw.len()];
                    let mut df = vec![0.0; tf.len()];
                    for (e, (&r, &s)) in receivers.iter().zip(senders.iter()).enumerate() {
                        let g_row = &g.data()[r * cols..(r + 1) * cols];
                        let f_row = tf.row(s);
                        dw[e] = g_row.iter().zip(f_row).map(|(a, b)| a * b).sum();
                        let w = tw.data()[e];
                        for (d, gv) in df[s * cols..(s + 1) * cols].iter_mut().zip(g_row) {
                            *d += w * gv;
                        }
                    }
                    accumulate(&mut grads, *weights, tw.shape(), dw);
                    accumulate(&mut grads, *feats, tf.shape(), df);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(&data) {
                *a += d;
            }
        }
        slot => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape")),
    }
}

fn softmax_backward(y: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
    y.iter().zip(g).map(|(y, g)| y * (g - dot)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Max-stabilized softmax over the unmasked slots of `scores`.
///
/// Masked slots get a large negative additive fill before normalization and
/// are then set to exactly zero.
pub fn softmax_masked(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Shape { op: "softmax_masked", left: vec![scores.len()], right: vec![mask.len()] });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptySoftmax);
    }
    let filled: Vec<f64> = scores.iter().zip(mask).map(|(&s, &m)| if m { s } else { s + MASK_FILL }).collect();
    let max = filled.iter().zip(mask).filter(|(_, &m)| m).map(|(&s, _)| s).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = filled.iter().zip(mask).map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 }).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}
