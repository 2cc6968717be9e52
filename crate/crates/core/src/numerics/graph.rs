use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};
use super::NumericError;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The pointwise operations exposed through [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Multiply,
    Add,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    Scale(Var, f64),
    RmsNormRows(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations supporting reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every operand precedes its consumer and
/// a single reverse sweep is a valid topological traversal.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is collected by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Graph node bound to a stored parameter. Repeated calls return the same node, so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(NumericError::Shape(format!(
                "matmul of {:?} by {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        tensor::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(NumericError::Shape(format!(
                "{what} of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary_same_shape(a, b, "multiply", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `[1, n]` row `bias` to every row of `a[m, n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericError> {
        let (m, n) = self.value(a).dims2();
        if self.value(bias).dims2() != (1, n) {
            return Err(NumericError::Shape(format!(
                "row broadcast of {:?} onto {:?}",
                self.value(bias).shape(),
                self.value(a).shape()
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(a, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, tensor::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn elementwise(
        &mut self,
        op: ElementwiseOp,
        a: Var,
        b: Option<Var>,
    ) -> Result<Var, NumericError> {
        let need = |b: Option<Var>| {
            b.ok_or_else(|| NumericError::Domain(format!("{op:?} needs two operands")))
        };
        match op {
            ElementwiseOp::Multiply => self.mul(a, need(b)?),
            ElementwiseOp::Add => self.add(a, need(b)?),
            ElementwiseOp::Sigmoid => Ok(self.sigmoid(a)),
            ElementwiseOp::Tanh => Ok(self.tanh(a)),
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut out = vec![0.0; t.len()];
        for (row, o) in t.data().chunks(cols).zip(out.chunks_mut(cols)) {
            tensor::softmax_into(row, o);
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(cols) {
            let lse = tensor::log_sum_exp(row);
            out.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Scalar `-log softmax(logits)[gold]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var, NumericError> {
        let t = self.value(logits);
        let (rows, cols) = t.dims2();
        if rows != 1 || gold >= cols {
            return Err(NumericError::Domain(format!(
                "cross entropy needs one row of logits and a gold index below {cols}, got {:?} and {gold}",
                t.shape()
            )));
        }
        let loss = tensor::log_sum_exp(t.data()) - t.data()[gold];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, gold), rg))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericError::Domain("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(NumericError::Shape(format!(
                "concat of {:?} rows with {:?}",
                self.value(*first).shape(),
                self.value(*bad).shape()
            )));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Vertical stacking of tensors with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericError::Domain("stack of nothing".into()))?;
        let cols = self.value(*first).cols();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).cols() != cols) {
            return Err(NumericError::Shape(format!(
                "stack of {:?} with {:?}",
                self.value(*first).shape(),
                self.value(*bad).shape()
            )));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::StackRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + width` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        if width == 0 || start + width > cols {
            return Err(NumericError::Shape(format!(
                "column slice {start}..{} of {:?}",
                start + width,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + width]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![rows, width], data)?, Op::SliceCols(a, start), rg))
    }

    /// Rows of `a` at `indices`, in order (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        if indices.is_empty() {
            return Err(NumericError::Domain("gather of no rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericError::Domain(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![indices.len(), cols], data)?,
            Op::Gather(a, indices.to_vec()),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = t.data()[r * cols + c];
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![cols, rows], data).expect("same size"),
            Op::Transpose(a),
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    /// Divides each row by its root mean square, `sqrt(mean(x²) + eps)`.
    pub fn rms_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut out = Vec::with_capacity(t.len());
        let mut scales = Vec::with_capacity(t.rows());
        for row in t.data().chunks(cols) {
            let r = (row.iter().map(|x| x * x).sum::<f64>() / cols as f64 + eps).sqrt();
            out.extend(row.iter().map(|x| x / r));
            scales.push(r);
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::RmsNormRows(a, scales), rg)
    }

    /// Populates gradients of every node reachable from the scalar `loss`.
    ///
    /// Any gradients from a previous sweep are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericError> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(NumericError::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(NumericError::Domain(
                "loss does not depend on any differentiable input".into(),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = node.grad.as_deref() else {
                continue;
            };
            backprop(before, node, dy);
        }
        Ok(())
    }

    /// Adds the gradients of every parameter node into the store's accumulators.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        let mut ids: Vec<_> = self.params.iter().collect();
        ids.sort();
        for (&pid, &var) in ids {
            if let Some(g) = self.grad(var) {
                for (acc, &d) in store.get_mut(pid).grad.data_mut().iter_mut().zip(g) {
                    *acc += d;
                }
            }
        }
    }
}

/// Runs `f` on the gradient buffer of `v` (allocated on first use) with read access to
/// every node, so operand values can be read while the buffer is written.
fn with_grad(nodes: &mut [Node], v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let len = nodes[v.0].value.len();
    let mut g = nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; len]);
    f(&mut g, nodes);
    nodes[v.0].grad = Some(g);
}

fn add_into(nodes: &mut [Node], v: Var, f: impl Fn(usize, &[Node]) -> f64) {
    with_grad(nodes, v, |g, nodes| {
        for (i, x) in g.iter_mut().enumerate() {
            *x += f(i, nodes);
        }
    });
}

fn backprop(before: &mut [Node], node: &Node, dy: &[f64]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (m, k) = before[a.0].value.dims2();
            let n = before[b.0].value.cols();
            with_grad(before, *a, |ga, nodes| {
                tensor::matmul_bt_acc(dy, nodes[b.0].value.data(), ga, m, n, k);
            });
            with_grad(before, *b, |gb, nodes| {
                tensor::matmul_at_acc(nodes[a.0].value.data(), dy, gb, m, k, n);
            });
        }
        Op::Add(a, b) => {
            add_into(before, *a, |i, _| dy[i]);
            add_into(before, *b, |i, _| dy[i]);
        }
        Op::Sub(a, b) => {
            add_into(before, *a, |i, _| dy[i]);
            add_into(before, *b, |i, _| -dy[i]);
        }
        Op::Mul(a, b) => {
            add_into(before, *a, |i, nodes| dy[i] * nodes[b.0].value.data()[i]);
            add_into(before, *b, |i, nodes| dy[i] * nodes[a.0].value.data()[i]);
        }
        Op::AddRow(a, bias) => {
            add_into(before, *a, |i, _| dy[i]);
            let n = before[bias.0].value.len();
            with_grad(before, *bias, |g, _| {
                for row in dy.chunks(n) {
                    for (x, &d) in g.iter_mut().zip(row) {
                        *x += d;
                    }
                }
            });
        }
        Op::Sigmoid(a) => add_into(before, *a, |i, _| dy[i] * y[i] * (1.0 - y[i])),
        Op::Tanh(a) => add_into(before, *a, |i, _| dy[i] * (1.0 - y[i] * y[i])),
        Op::RmsNormRows(a, scales) => {
            let cols = node.value.cols();
            with_grad(before, *a, |g, _| {
                for (((gr, yr), dr), r) in g.chunks_mut(cols).zip(y.chunks(cols)).zip(dy.chunks(cols)).zip(scales) {
                    let dot = yr.iter().zip(dr).map(|(y, d)| y * d).sum::<f64>() / cols as f64;
                    for ((x, &yv), &d) in gr.iter_mut().zip(yr).zip(dr) {
                        *x += (d - yv * dot) / r;
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let cols = node.value.cols();
            with_grad(before, *a, |g, _| {
                for ((gr, yr), dr) in g.chunks_mut(cols).zip(y.chunks(cols)).zip(dy.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                    for ((x, &p), &d) in gr.iter_mut().zip(yr).zip(dr) {
                        *x += p * (d - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let cols = node.value.cols();
            with_grad(before, *a, |g, _| {
                for ((gr, yr), dr) in g.chunks_mut(cols).zip(y.chunks(cols)).zip(dy.chunks(cols)) {
                    let total: f64 = dr.iter().sum();
                    for ((x, &lp), &d) in gr.iter_mut().zip(yr).zip(dr) {
                        *x += d - lp.exp() * total;
                    }
                }
            });
        }
        Op::CrossEntropy(a, gold) => {
            let logits = before[a.0].value.data();
            let mut p = vec![0.0; logits.len()];
            tensor::softmax_into(logits, &mut p);
            p[*gold] -= 1.0;
            add_into(before, *a, |i, _| dy[0] * p[i]);
        }
        Op::ConcatCols(parts) => {
            let rows = node.value.rows();
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let w = before[p.0].value.cols();
                add_into(before, p, |i, _| dy[(i / w) * total + offset + i % w]);
                offset += w;
            }
            debug_assert_eq!(offset * rows, dy.len());
        }
        Op::StackRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = before[p.0].value.len();
                add_into(before, p, |i, _| dy[offset + i]);
                offset += len;
            }
        }
        Op::SliceCols(a, start) => {
            let width = node.value.cols();
            let cols = before[a.0].value.cols();
            with_grad(before, *a, |g, _| {
                for (r, drow) in dy.chunks(width).enumerate() {
                    for (x, &d) in g[r * cols + start..r * cols + start + width].iter_mut().zip(drow) {
                        *x += d;
                    }
                }
            });
        }
        Op::Gather(a, indices) => {
            let cols = node.value.cols();
            with_grad(before, *a, |g, _| {
                for (&src, drow) in indices.iter().zip(dy.chunks(cols)) {
                    for (x, &d) in g[src * cols..(src + 1) * cols].iter_mut().zip(drow) {
                        *x += d;
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (rows, cols) = before[a.0].value.dims2();
            add_into(before, *a, |i, _| dy[(i % cols) * rows + i / cols]);
        }
        Op::Sum(a) => add_into(before, *a, |_, _| dy[0]),
        Op::Scale(a, c) => add_into(before, *a, |i, _| dy[i] * c),
    }
}
