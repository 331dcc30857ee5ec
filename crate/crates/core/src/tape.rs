//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation executed on it as a node holding the
//! forward value and enough context to replay the backward rule. Nodes are
//! appended in execution order, so the node list is already a topological
//! order and [`Graph::backward`] simply walks it in reverse.
//!
//! Parameters are borrowed into the graph with [`Graph::param`] so that a
//! forward pass over a large embedding table does not copy it. A graph is
//! built per minibatch and dropped afterwards.
//!
//! Broadcasting is limited to [`Graph::add`] with a bias vector (`[n]` or
//! `[1 × n]`) broadcast over the rows of a `[m × n]` matrix.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{require_matrix, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations exposed through [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<u32>,
        pad: Option<u32>,
    },
    Conv1d {
        x: Var,
        kernels: Var,
        bias: Var,
    },
    MaskedSoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedMeanRows {
        x: Var,
        mask: Vec<bool>,
        count: usize,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// The gradient tape.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Cow::Owned(value), rg, op)
    }

    /// Adds an owned leaf tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), requires_grad, Op::Leaf)
    }

    /// Adds an owned leaf that does not require a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Borrows a trainable parameter into the graph.
    pub fn param(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), true, Op::Leaf)
    }

    /// Borrows a tensor as a constant (inference mode).
    pub fn frozen(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// On/off state of every ReLU unit recorded so far, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a.0].value.data().iter().map(|&x| x > 0.0))
            .collect()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was reachable.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, &[a, b], Op::MatMul(a, b)))
    }

    /// Elementwise sum. `b` may also be a bias vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if ta.is_matrix()
            && tb.numel() == ta.cols()
            && (tb.shape().len() == 1 || (tb.is_matrix() && tb.rows() == 1))
        {
            true
        } else {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        };
        let mut out = ta.data().to_vec();
        if broadcast {
            let n = tb.numel();
            for row in out.chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(tb.data()) {
                    *o += bv;
                }
            }
        } else {
            for (o, &bv) in out.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.derived(t, &[a, b], Op::Add { a, b, broadcast }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(t, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(t, &[a, b], Op::Mul(a, b)))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), out)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), out).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.derived(t, &[a], Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.derived(t, &[a], Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.derived(t, &[a], Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.derived(t, &[a], Op::Relu(a))
    }

    /// Dispatches one of the pointwise operations by tag.
    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::Contract(format!(
                "{op:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Mul => self.mul(operands[0], operands[1]),
            Elementwise::Tanh => Ok(self.tanh(operands[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(operands[0])),
            Elementwise::Relu => Ok(self.relu(operands[0])),
        }
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = require_matrix("transpose", ta)?;
        let d = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.derived(t, &[a], Op::Transpose(a)))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = require_matrix("slice_rows", ta)?;
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", ta.shape(), &[start, len]));
        }
        let out = ta.data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], out)?;
        Ok(self.derived(t, &[a], Op::SliceRows(a, start)))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = require_matrix("slice_cols", ta)?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", ta.shape(), &[start, len]));
        }
        let d = ta.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&d[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], out)?;
        Ok(self.derived(t, &[a], Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of nothing".into()));
        }
        let m = require_matrix("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = require_matrix("concat_cols", t)?;
            if r != m {
                return Err(Error::dim("concat_cols", self.value(parts[0]).shape(), t.shape()));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, parts, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of nothing".into()));
        }
        let n = require_matrix("concat_rows", self.value(parts[0]))?.1;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = require_matrix("concat_rows", t)?;
            if c != n {
                return Err(Error::dim("concat_rows", self.value(parts[0]).shape(), t.shape()));
            }
            m += r;
            out.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, parts, Op::ConcatRows(parts.to_vec())))
    }

    /// Embedding lookup: row `i` of the result is row `ids[i]` of `table`.
    /// Positions holding the padding id produce zero rows and never route
    /// gradient into the table.
    pub fn gather_rows(&mut self, table: Var, ids: &[u32], pad: Option<u32>) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = require_matrix("gather_rows", tt)?;
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut out = vec![0.0; ids.len() * d];
        for (pos, &id) in ids.iter().enumerate() {
            if id as usize >= v {
                return Err(Error::Vocab {
                    position: pos,
                    id,
                    vocab_size: v,
                });
            }
            if Some(id) == pad {
                continue;
            }
            out[pos * d..(pos + 1) * d].copy_from_slice(tt.row_slice(id as usize));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.derived(
            t,
            &[table],
            Op::Gather {
                table,
                ids: ids.to_vec(),
                pad,
            },
        ))
    }

    /// Valid 1-D cross-correlation along the length axis.
    ///
    /// `x: [len × dim]`, `kernels: [k × dim × filters]`, `bias: [filters]` or
    /// `[1 × filters]`; output `[(len − k + 1) × filters]`.
    pub fn conv1d_valid(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernels), self.value(bias));
        let (len, dim) = require_matrix("conv1d", tx)?;
        let ks = tk.shape();
        if ks.len() != 3 || ks[1] != dim {
            return Err(Error::dim("conv1d", tx.shape(), ks));
        }
        let (k, filters) = (ks[0], ks[2]);
        if tb.numel() != filters {
            return Err(Error::dim("conv1d bias", ks, tb.shape()));
        }
        if len < k {
            return Err(Error::SequenceTooShort { len, required: k });
        }
        let out_len = len - k + 1;
        let (xd, kd, bd) = (tx.data(), tk.data(), tb.data());
        let mut out = Vec::with_capacity(out_len * filters);
        for _ in 0..out_len {
            out.extend_from_slice(bd);
        }
        for t in 0..out_len {
            let row = &mut out[t * filters..(t + 1) * filters];
            for j in 0..k {
                let xrow = &xd[(t + j) * dim..(t + j + 1) * dim];
                for (di, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kd[(j * dim + di) * filters..(j * dim + di + 1) * filters];
                    for (o, &kv) in row.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![out_len, filters], out)?;
        Ok(self.derived(t, &[x, kernels, bias], Op::Conv1d { x, kernels, bias }))
    }

    /// Row-wise softmax over the columns flagged valid in `mask`; masked
    /// columns receive weight exactly zero.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = require_matrix("masked_softmax_rows", ta)?;
        if mask.len() != n {
            return Err(Error::dim("masked_softmax_rows", ta.shape(), &[mask.len()]));
        }
        if !mask.iter().any(|&v| v) {
            return Err(Error::EmptySequence);
        }
        let d = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &v)| v)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * n..(i + 1) * n];
            let mut z = 0.0;
            for j in 0..n {
                if mask[j] {
                    o[j] = (row[j] - max).exp();
                    z += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, &[a], Op::MaskedSoftmaxRows(a)))
    }

    /// Per-row layer normalization with learned gain and bias (`[dim]` or `[1 × dim]`).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (m, n) = require_matrix("layer_norm", tx)?;
        if tg.numel() != n || tb.numel() != n {
            return Err(Error::dim("layer_norm", tx.shape(), tg.shape()));
        }
        let d = tx.data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(
            t,
            &[x, gain, bias],
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean over the rows flagged valid in `mask`, as a `[1 × dim]` row.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = require_matrix("masked_mean_rows", tx)?;
        if mask.len() != m {
            return Err(Error::dim("masked_mean_rows", tx.shape(), &[mask.len()]));
        }
        let count = mask.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::EmptySequence);
        }
        let mut out = vec![0.0; n];
        for (i, _) in mask.iter().enumerate().filter(|(_, &v)| v) {
            for (o, &v) in out.iter_mut().zip(tx.row_slice(i)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= count as f64;
        }
        let t = Tensor::new(vec![1, n], out)?;
        Ok(self.derived(
            t,
            &[x],
            Op::MaskedMeanRows {
                x,
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.derived(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (b, c) = require_matrix("softmax_cross_entropy", tl)?;
        if targets.len() != b {
            return Err(Error::dim("softmax_cross_entropy", tl.shape(), &[targets.len()]));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::LabelIndex {
                    row: i,
                    target: t,
                    classes: c,
                });
            }
            let row = tl.row_slice(i);
            let (arg, max) = row
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, x)| if x > acc.1 { (j, x) } else { acc });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &x)| (x - max).exp())
                .sum();
            let log_z = max + rest.ln_1p();
            loss += (max - row[t]) + rest.ln_1p();
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
        }
        let t = Tensor::scalar(loss / b as f64);
        Ok(self.derived(
            t,
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Back-propagates from a scalar `loss`, populating the gradient of every
    /// `requires_grad` node it reaches. Gradients from a previous call are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dY · Bᵀ
                    for r in 0..m {
                        for c in 0..n {
                            let gv = g[r * n + c];
                            if gv == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                ga[r * k + kk] += gv * tb.data()[kk * n + c];
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = Aᵀ · dY
                    for r in 0..m {
                        for kk in 0..k {
                            let av = ta.data()[r * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            let grow = &g[r * n..(r + 1) * n];
                            let brow = &mut gb[kk * n..(kk + 1) * n];
                            for (o, &gv) in brow.iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    if *broadcast {
                        let n = gb.len();
                        for row in g.chunks(n) {
                            axpy(gb, row, 1.0);
                        }
                    } else {
                        axpy(gb, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(tb) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(ta) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, g, *c);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let n = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(&mut ga[start * n..start * n + g.len()], g, 1.0);
                }
            }
            Op::SliceCols(a, start) => {
                let (m, len) = (out.rows(), out.cols());
                let n = self.value(*a).cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..m {
                        axpy(
                            &mut ga[r * n + start..r * n + start + len],
                            &g[r * len..(r + 1) * len],
                            1.0,
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (out.rows(), out.cols());
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.slot(grads, *p) {
                        for r in 0..m {
                            axpy(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * n + offset..r * n + offset + w],
                                1.0,
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if let Some(gp) = self.slot(grads, *p) {
                        axpy(gp, &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::Gather { table, ids, pad } => {
                let d = out.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (pos, &id) in ids.iter().enumerate() {
                        if Some(id) == *pad {
                            continue;
                        }
                        let id = id as usize;
                        axpy(&mut gt[id * d..(id + 1) * d], &g[pos * d..(pos + 1) * d], 1.0);
                    }
                }
            }
            Op::Conv1d { x, kernels, bias } => {
                let (tx, tk) = (self.value(*x), self.value(*kernels));
                let dim = tx.cols();
                let (k, filters) = (tk.shape()[0], tk.shape()[2]);
                let out_len = out.rows();
                if let Some(gx) = self.slot(grads, *x) {
                    for t in 0..out_len {
                        let grow = &g[t * filters..(t + 1) * filters];
                        for j in 0..k {
                            for di in 0..dim {
                                let krow = &tk.data()[(j * dim + di) * filters..(j * dim + di + 1) * filters];
                                gx[(t + j) * dim + di] += dot(grow, krow);
                            }
                        }
                    }
                }
                if let Some(gk) = self.slot(grads, *kernels) {
                    for t in 0..out_len {
                        let grow = &g[t * filters..(t + 1) * filters];
                        for j in 0..k {
                            for di in 0..dim {
                                let xv = tx.data()[(t + j) * dim + di];
                                if xv == 0.0 {
                                    continue;
                                }
                                axpy(
                                    &mut gk[(j * dim + di) * filters..(j * dim + di + 1) * filters],
                                    grow,
                                    xv,
                                );
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(filters) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::MaskedSoftmaxRows(a) => {
                let n = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for (r, y) in out.data().chunks(n).enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let s = dot(gr, y);
                        for j in 0..n {
                            ga[r * n + j] += y[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = out.cols();
                let gain_v = self.value(*gain).data();
                if let Some(gg) = self.slot(grads, *gain) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for gr in g.chunks(n) {
                        axpy(gb, gr, 1.0);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let nf = n as f64;
                    for (r, (gr, hr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h = dot(&dh, hr);
                        for j in 0..n {
                            gx[r * n + j] += inv_std[r] / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::MaskedMeanRows { x, mask, count } => {
                let n = out.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    let w = 1.0 / *count as f64;
                    for (r, _) in mask.iter().enumerate().filter(|(_, &v)| v) {
                        axpy(&mut gx[r * n..(r + 1) * n], g, w);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let b = targets.len();
                let c = probs.len() / b;
                if let Some(gl) = self.slot(grads, *logits) {
                    let w = g[0] / b as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += w * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            axpy(orow, &b[kk * n..(kk + 1) * n], av);
        }
    }
    out
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
