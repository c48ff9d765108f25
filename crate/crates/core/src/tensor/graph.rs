use super::{Gradients, ParamId, ParamSet, Real, Tensor, LOG_EPSILON};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Value<S> {
    Owned(Tensor<S>),
    Param(ParamId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    Left,
    Right,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Neg(Var),
    Sum(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    MaxAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    RegionMax {
        weights: Var,
        embeds: Var,
        radius: usize,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<S>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<S>,
    },
    ConcatCols(Var, Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
}

#[derive(Debug)]
struct Node<S> {
    value: Value<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Define-by-run computation graph. Nodes are appended in execution order, so
/// the node list is already topologically sorted.
#[derive(Debug)]
pub struct Graph<'p, S: Real> {
    params: &'p ParamSet<S>,
    nodes: Vec<Node<S>>,
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax_in_place<S: Real>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

impl<'p, S: Real> Graph<'p, S> {
    pub fn new(params: &'p ParamSet<S>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.value(v).data()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.data(v)[0]
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter, referenced without copying.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, p) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![S::zero(); m * p];
        for i in 0..m {
            let orow = &mut out[i * p..(i + 1) * p];
            for l in 0..k {
                let x = ad[i * k + l];
                for (o, &y) in orow.iter_mut().zip(&bd[l * p..(l + 1) * p]) {
                    *o += x * y;
                }
            }
        }
        let t = Tensor::new(&[m, p], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.rank2("transpose", a)?;
        let ad = self.data(a);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let t = Tensor::new(&[n, m], out)?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let data = self.data(a).to_vec();
        let t = Tensor::new(shape, data).map_err(|_| Error::shape("reshape", self.shape(a), shape))?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::None);
        }
        match (sa, sb) {
            ([_, n], [1, n2]) if n == n2 => Ok(Broadcast::Right),
            ([1, n], [_, n2]) if n == n2 => Ok(Broadcast::Left),
            _ => Err(Error::shape(op, sa, sb)),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        make: impl FnOnce(Var, Var, Broadcast) -> Op<S>,
    ) -> Result<Var> {
        let kind = self.broadcast_kind(name, a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let (shape, data) = match kind {
            Broadcast::None => (
                self.shape(a).to_vec(),
                ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::Right => {
                let n = bd.len();
                (
                    self.shape(a).to_vec(),
                    ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % n])).collect(),
                )
            }
            Broadcast::Left => {
                let n = ad.len();
                (
                    self.shape(b).to_vec(),
                    bd.iter().enumerate().map(|(i, &y)| f(ad[i % n], y)).collect(),
                )
            }
        };
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, make(a, b, kind), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(t.shape(), data).expect("same shape");
        self.push(t, op, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, S::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x.is_nan() || x > S::zero() { x } else { S::zero() },
            Op::Relu(a),
        )
    }

    /// Natural log with inputs clamped below at [`LOG_EPSILON`].
    pub fn log(&mut self, a: Var) -> Var {
        let eps = S::from_f64_lossy(LOG_EPSILON);
        self.unary(a, move |x| x.max(eps).ln(), Op::Log(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let ones = self.constant(Tensor::full(self.shape(a), S::one()));
        self.sub(ones, a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::dim(op, format!("axis {axis} out of range for shape {shape:?}")));
        }
        Ok(axis_split(shape, axis))
    }

    fn reduced_shape(&self, a: Var, axis: usize) -> Vec<usize> {
        let mut shape = self.shape(a).to_vec();
        shape[axis] = 1;
        shape
    }

    /// Mean along `axis`, keeping the axis with size 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.check_axis("mean_axis", a, axis)?;
        let d = self.data(a);
        let inv = S::one() / S::from_usize(len).unwrap();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|x| *x *= inv);
        let t = Tensor::new(&self.reduced_shape(a, axis), out)?;
        Ok(self.push(t, Op::MeanAxis { input: a, axis }, &[a]))
    }

    /// Mean over the rows of a matrix, giving a `1 x k` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.rank2("mean_rows", a)?;
        self.mean_axis(a, 0)
    }

    /// Maximum along `axis`, keeping the axis with size 1. Ties go to the
    /// first index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.check_axis("max_axis", a, axis)?;
        let d = self.data(a);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * len) * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
        let t = Tensor::new(&self.reduced_shape(a, axis), out)?;
        Ok(self.push(t, Op::MaxAxis { input: a, argmax }, &[a]))
    }

    /// Gathers rows of `table` (viewed as `rows x rest`).
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("embedding_lookup", format!("table shape {shape:?}")));
        }
        if ids.is_empty() {
            return Err(Error::dim("embedding_lookup", "empty id list"));
        }
        let rows = shape[0];
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Index {
                op: "embedding_lookup",
                index: bad,
                size: rows,
            });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.numel() / rows);
        for &id in ids {
            data.extend_from_slice(t.row(id));
        }
        let mut out_shape = shape;
        out_shape[0] = ids.len();
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Region pooling: for each position `i`,
    /// `out[i, d] = max_t weights[i, t + radius, d] * embeds[i + t, d]` over
    /// offsets `t` in `[-radius, radius]` that stay inside the sequence.
    pub fn region_max(&mut self, weights: Var, embeds: Var, radius: usize) -> Result<Var> {
        let (n, k) = self.rank2("region_max", embeds)?;
        let width = 2 * radius + 1;
        if self.shape(weights) != [n, width, k] {
            return Err(Error::shape("region_max", self.shape(weights), &[n, width, k]));
        }
        let (w, e) = (self.data(weights), self.data(embeds));
        let mut out = Vec::with_capacity(n * k);
        let mut argmax = Vec::with_capacity(n * k);
        for i in 0..n {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            for d in 0..k {
                let mut best = S::neg_infinity();
                let mut best_slot = 0;
                for j in lo..=hi {
                    let slot = j + radius - i;
                    let v = w[(i * width + slot) * k + d] * e[j * k + d];
                    if v > best {
                        best = v;
                        best_slot = slot;
                    }
                }
                out.push(best);
                argmax.push(best_slot);
            }
        }
        let t = Tensor::new(&[n, k], out)?;
        Ok(self.push(
            t,
            Op::RegionMax {
                weights,
                embeds,
                radius,
                argmax,
            },
            &[weights, embeds],
        ))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = *t.shape().last().unwrap();
        let mut data = t.data().to_vec();
        data.chunks_mut(c).for_each(softmax_in_place);
        let out = Tensor::new(t.shape(), data).expect("same shape");
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Fused softmax + negative log-likelihood of `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.data(logits);
        if target >= x.len() {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: target,
                size: x.len(),
            });
        }
        let mut probs = x.to_vec();
        softmax_in_place(&mut probs);
        let max = x.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = x.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
        let loss = lse - x[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, target, probs },
            &[logits],
        ))
    }

    /// Fused sigmoid + binary cross-entropy summed over classes.
    pub fn sigmoid_binary_cross_entropy(&mut self, logits: Var, targets: &[S]) -> Result<Var> {
        let x = self.data(logits);
        if targets.len() != x.len() {
            return Err(Error::shape(
                "sigmoid_binary_cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&v, &l)| v.max(S::zero()) - v * l + (S::one() + (-v.abs()).exp()).ln())
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.rank2("concat_cols", a)?;
        let (m2, q) = self.rank2("concat_cols", b)?;
        if m != m2 {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        let t = Tensor::new(&[m, p + q], out)?;
        Ok(self.push(t, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Row `i` of a matrix as a `1 x k` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (m, k) = self.rank2("row", a)?;
        if i >= m {
            return Err(Error::Index {
                op: "row",
                index: i,
                size: m,
            });
        }
        let data = self.data(a)[i * k..(i + 1) * k].to_vec();
        let t = Tensor::new(&[1, k], data)?;
        Ok(self.push(t, Op::Row(a, i), &[a]))
    }

    /// Stacks `1 x k` rows into an `n x k` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or_else(|| Error::dim("stack_rows", "no rows"))?;
        let k = self.shape(first).iter().product::<usize>();
        let mut out = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            if self.value(r).numel() != k {
                return Err(Error::shape("stack_rows", self.shape(first), self.shape(r)));
            }
            out.extend_from_slice(self.data(r));
        }
        let t = Tensor::new(&[rows.len(), k], out)?;
        Ok(self.push(t, Op::StackRows(rows.to_vec()), rows))
    }

    /// Reverse pass from a single-element node. Each node is visited once, in
    /// reverse creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must have one element, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![S::one()]);
        let mut out = Gradients::new(self.params);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    fn backward_binary(
        &self,
        grads: &mut [Option<Vec<S>>],
        a: Var,
        b: Var,
        kind: Broadcast,
        g: &[S],
        da: impl Fn(usize, usize) -> S,
        db: impl Fn(usize, usize) -> S,
    ) {
        // Maps an output index to the operand indices it read from.
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        let ia = |i: usize| if kind == Broadcast::Left { i % na } else { i };
        let ib = |i: usize| if kind == Broadcast::Right { i % nb } else { i };
        if let Some(buf) = self.grad_buf(grads, a) {
            for (i, &gi) in g.iter().enumerate() {
                buf[ia(i)] += gi * da(ia(i), ib(i));
            }
        }
        if let Some(buf) = self.grad_buf(grads, b) {
            for (i, &gi) in g.iter().enumerate() {
                buf[ib(i)] += gi * db(ia(i), ib(i));
            }
        }
    }

    fn backward_unary(&self, grads: &mut [Option<Vec<S>>], a: Var, g: &[S], d: impl Fn(usize) -> S) {
        if let Some(buf) = self.grad_buf(grads, a) {
            for (i, (&gi, b)) in g.iter().zip(buf.iter_mut()).enumerate() {
                *b += gi * d(i);
            }
        }
    }

    fn backward_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>], out: &mut Gradients<S>) {
        let y = match &node.value {
            Value::Owned(t) => t.data(),
            Value::Param(id) => self.params.get(*id).data(),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.add_dense(*id, g),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.shape(*b)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * p..(i + 1) * p];
                        for l in 0..k {
                            let brow = &bd[l * p..(l + 1) * p];
                            buf[i * k + l] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * p..(i + 1) * p];
                        for l in 0..k {
                            let x = ad[i * k + l];
                            for (dst, &gv) in buf[l * p..(l + 1) * p].iter_mut().zip(grow) {
                                *dst += x * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => self.backward_unary(grads, *a, g, |_| S::one()),
            Op::Add(a, b, kind) => self.backward_binary(grads, *a, *b, *kind, g, |_, _| S::one(), |_, _| S::one()),
            Op::Sub(a, b, kind) => self.backward_binary(grads, *a, *b, *kind, g, |_, _| S::one(), |_, _| -S::one()),
            Op::Mul(a, b, kind) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.backward_binary(grads, *a, *b, *kind, g, |_, j| bd[j], |i, _| ad[i])
            }
            Op::Scale(a, f) => self.backward_unary(grads, *a, g, |_| *f),
            Op::Sigmoid(a) => self.backward_unary(grads, *a, g, |i| y[i] * (S::one() - y[i])),
            Op::Tanh(a) => self.backward_unary(grads, *a, g, |i| S::one() - y[i] * y[i]),
            Op::Relu(a) => {
                let x = self.data(*a);
                self.backward_unary(grads, *a, g, |i| if x[i] > S::zero() { S::one() } else { S::zero() })
            }
            Op::Log(a) => {
                let x = self.data(*a);
                let eps = S::from_f64_lossy(LOG_EPSILON);
                self.backward_unary(grads, *a, g, |i| if x[i] > eps { S::one() / x[i] } else { S::zero() })
            }
            Op::Neg(a) => self.backward_unary(grads, *a, g, |_| -S::one()),
            Op::Sum(a) => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    buf.iter_mut().for_each(|b| *b += g[0]);
                }
            }
            Op::MeanAxis { input, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*input), *axis);
                let inv = S::one() / S::from_usize(len).unwrap();
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                buf[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                }
            }
            Op::MaxAxis { input, argmax } => {
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        buf[src] += gv;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let width = self.value(*table).numel() / self.shape(*table)[0];
                if let Op::Param(pid) = self.nodes[table.0].op {
                    for (pos, &id) in ids.iter().enumerate() {
                        out.add_row(pid, width, id, &g[pos * width..(pos + 1) * width]);
                    }
                } else if let Some(buf) = self.grad_buf(grads, *table) {
                    for (pos, &id) in ids.iter().enumerate() {
                        let src = &g[pos * width..(pos + 1) * width];
                        for (d, &s) in buf[id * width..(id + 1) * width].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::RegionMax {
                weights,
                embeds,
                radius,
                argmax,
            } => {
                let (n, k) = (self.shape(*embeds)[0], self.shape(*embeds)[1]);
                let width = 2 * radius + 1;
                let (w, e) = (self.data(*weights), self.data(*embeds));
                if let Some(buf) = self.grad_buf(grads, *weights) {
                    for i in 0..n {
                        for d in 0..k {
                            let slot = argmax[i * k + d];
                            let j = i + slot - radius;
                            buf[(i * width + slot) * k + d] += g[i * k + d] * e[j * k + d];
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *embeds) {
                    for i in 0..n {
                        for d in 0..k {
                            let slot = argmax[i * k + d];
                            let j = i + slot - radius;
                            buf[j * k + d] += g[i * k + d] * w[(i * width + slot) * k + d];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let c = *self.shape(*a).last().unwrap();
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for ((yr, gr), br) in y.chunks(c).zip(g.chunks(c)).zip(buf.chunks_mut(c)) {
                        let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((b, &p), &q) in br.iter_mut().zip(yr).zip(gr) {
                            *b += p * (q - dot);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, target, probs } => {
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    for (j, (b, &p)) in buf.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { S::one() } else { S::zero() };
                        *b += g[0] * (p - onehot);
                    }
                }
            }
            Op::SigmoidBce { logits, targets } => {
                let x = self.data(*logits);
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    for ((b, &v), &l) in buf.iter_mut().zip(x).zip(targets) {
                        *b += g[0] * (sigmoid(v) - l);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = (self.shape(*a)[0], self.shape(*a)[1]);
                let q = self.shape(*b)[1];
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for i in 0..m {
                        for j in 0..p {
                            buf[i * p + j] += g[i * (p + q) + j];
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for i in 0..m {
                        for j in 0..q {
                            buf[i * q + j] += g[i * (p + q) + p + j];
                        }
                    }
                }
            }
            Op::Row(a, i) => {
                let k = self.shape(*a)[1];
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for (b, &gv) in buf[i * k..(i + 1) * k].iter_mut().zip(g) {
                        *b += gv;
                    }
                }
            }
            Op::StackRows(rows) => {
                let k = g.len() / rows.len();
                for (r, &v) in rows.iter().enumerate() {
                    if let Some(buf) = self.grad_buf(grads, v) {
                        for (b, &gv) in buf.iter_mut().zip(&g[r * k..(r + 1) * k]) {
                            *b += gv;
                        }
                    }
                }
            }
        }
    }
}
