//! Define-by-run tape for reverse-mode differentiation.
//!
//! Each forward step records its nodes on a fresh [`Tape`]; nodes are pushed
//! in evaluation order, so the node vector is already a topological order and
//! [`Tape::backward`] simply walks it in reverse.

use super::kernels::{self, ConvDims};
use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MeanTime(Var),
    Relu(Var),
    /// `tanh(a)` and `sigmoid(b)` kept from the forward pass.
    Gated {
        a: Var,
        b: Var,
        th: Vec<f64>,
        sg: Vec<f64>,
    },
    MatVec(Var, Var),
    CausalConv { x: Var, w: Var, dilation: usize },
    StridedConv { x: Var, w: Var, stride: usize },
    TransposedConv { x: Var, w: Var, stride: usize },
    Embedding { table: Var, index: usize },
    GatherColumns { table: Var, indices: Vec<usize> },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        /// Softmax probabilities from the forward pass, `[Q x T]`.
        probs: Vec<f64>,
    },
    L2Normalize(Var),
    SliceTime { x: Var, start: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::shape(op, format!("expected rank-2 tensor, got {:?}", t.shape())))
}

fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    t.dims3()
        .ok_or_else(|| Error::shape(op, format!("expected rank-3 kernel, got {:?}", t.shape())))
}

impl Tape {
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

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Binds a named parameter. Frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store.get(name)?;
        Ok(self.push(p.tensor.clone(), Op::Param(p.name.clone()), p.trainable))
    }

    /// Binds a named parameter as a constant regardless of its trainable flag.
    pub fn param_frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store.get(name)?;
        Ok(self.push(p.tensor.clone(), Op::Leaf, false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        check_finite("add", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a per-channel vector `b[C]` to every column of `x[C x T]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, t) = dims2("add_bias", self.value(x))?;
        let tb = self.value(b);
        if tb.len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias of length {} for {c} channels", tb.len()),
            ));
        }
        let mut data = self.value(x).data().to_vec();
        for (row, &bias) in data.chunks_mut(t).zip(tb.data()) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        let out = Tensor::new(vec![c, t], data)?;
        check_finite("add_bias", &out)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        check_finite("scale", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale(x, factor), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let out = Tensor::scalar(s);
        check_finite("sum", &out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    /// Mean over the time axis: `[C x T] -> [C]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let (c, t) = dims2("mean_time", self.value(x))?;
        if t == 0 {
            return Err(Error::Empty("mean_time over zero columns"));
        }
        let data = self
            .value(x)
            .data()
            .chunks(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let out = Tensor::new(vec![c], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MeanTime(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    /// `tanh(a) * sigmoid(b)`, elementwise.
    pub fn gated_activation(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "gated_activation",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let th: Vec<f64> = ta.data().iter().map(|x| x.tanh()).collect();
        let sg: Vec<f64> = tb.data().iter().map(|&y| kernels::sigmoid(y)).collect();
        let data = th.iter().zip(&sg).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        check_finite("gated_activation", &out)?;
        let rg = self.rg(a) || self.rg(b);
        let op = if rg { Op::Gated { a, b, th, sg } } else { Op::Leaf };
        Ok(self.push(out, op, rg))
    }

    /// `W[R x C] * v[C] -> [R]`.
    pub fn matvec(&mut self, w: Var, v: Var) -> Result<Var> {
        let (r, c) = dims2("matvec", self.value(w))?;
        if self.value(v).len() != c {
            return Err(Error::shape(
                "matvec",
                format!("matrix {r}x{c} times vector of length {}", self.value(v).len()),
            ));
        }
        let mut y = vec![0.0; r];
        kernels::matvec(r, c, self.value(w).data(), self.value(v).data(), &mut y);
        let out = Tensor::vector(y);
        check_finite("matvec", &out)?;
        let rg = self.rg(w) || self.rg(v);
        Ok(self.push(out, Op::MatVec(w, v), rg))
    }

    fn conv_dims(&self, op: &'static str, x: Var, w: Var, transposed: bool) -> Result<ConvDims> {
        let (c_in, t) = dims2(op, self.value(x))?;
        let (a, b, k) = dims3(op, self.value(w))?;
        let (w_in, c_out) = if transposed { (a, b) } else { (b, a) };
        if w_in != c_in {
            return Err(Error::shape(
                op,
                format!("input has {c_in} channels, kernel expects {w_in}"),
            ));
        }
        if k == 0 {
            return Err(Error::shape(op, "kernel width must be positive"));
        }
        Ok(ConvDims { c_in, c_out, k, t })
    }

    /// Causal dilated convolution; the input is implicitly left-padded with
    /// `(K-1) * dilation` zeros so the output keeps the input length.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::OutOfRange {
                what: "dilation",
                detail: "must be at least 1".into(),
            });
        }
        let d = self.conv_dims("causal_conv1d", x, w, false)?;
        let mut out = vec![0.0; d.c_out * d.t];
        kernels::causal_conv_forward(d, dilation, self.value(x).data(), self.value(w).data(), &mut out);
        let out = Tensor::new(vec![d.c_out, d.t], out)?;
        check_finite("causal_conv1d", &out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::CausalConv { x, w, dilation }, rg))
    }

    /// Unpadded strided convolution, output length `(T - K) / stride + 1`.
    pub fn strided_conv1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::OutOfRange {
                what: "stride",
                detail: "must be at least 1".into(),
            });
        }
        let d = self.conv_dims("strided_conv1d", x, w, false)?;
        let len = kernels::strided_len(d.t, d.k, stride).ok_or_else(|| {
            Error::shape(
                "strided_conv1d",
                format!("input length {} shorter than kernel {}", d.t, d.k),
            )
        })?;
        let mut out = vec![0.0; d.c_out * len];
        kernels::strided_conv_forward(d, stride, self.value(x).data(), self.value(w).data(), &mut out);
        let out = Tensor::new(vec![d.c_out, len], out)?;
        check_finite("strided_conv1d", &out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::StridedConv { x, w, stride }, rg))
    }

    /// Transposed convolution mapping `[C_in x F]` to exactly
    /// `[C_out x F*stride]`; the kernel is `[C_in x C_out x K]`.
    pub fn transposed_conv1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::OutOfRange {
                what: "stride",
                detail: "must be at least 1".into(),
            });
        }
        let d = self.conv_dims("transposed_conv1d", x, w, true)?;
        let mut out = vec![0.0; d.c_out * d.t * stride];
        kernels::transposed_conv_forward(d, stride, self.value(x).data(), self.value(w).data(), &mut out);
        let out = Tensor::new(vec![d.c_out, d.t * stride], out)?;
        check_finite("transposed_conv1d", &out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::TransposedConv { x, w, stride }, rg))
    }

    /// Row `index` of a `[S x D]` table.
    pub fn embedding_lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let (s, _) = dims2("embedding_lookup", self.value(table))?;
        if index >= s {
            return Err(Error::OutOfRange {
                what: "embedding index",
                detail: format!("{index} not in [0, {s})"),
            });
        }
        let out = Tensor::vector(self.value(table).row(index).to_vec());
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding { table, index }, rg))
    }

    /// Column gather `table[:, indices[t]]`, the product of a `[C x Q]`
    /// matrix with a one-hot `[Q x T]` input.
    pub fn gather_columns(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (c, q) = dims2("gather_columns", self.value(table))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= q) {
            return Err(Error::OutOfRange {
                what: "column index",
                detail: format!("{bad} not in [0, {q})"),
            });
        }
        let t = indices.len();
        let src = self.value(table).data();
        let mut out = vec![0.0; c * t];
        for (row, dst) in out.chunks_mut(t.max(1)).enumerate().take(c) {
            let base = row * q;
            for (d, &i) in dst.iter_mut().zip(indices) {
                *d = src[base + i];
            }
        }
        let out = Tensor::new(vec![c, t], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::GatherColumns {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over columns of `-log softmax(logits[:, t])[targets[t]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (q, t) = dims2("softmax_cross_entropy", self.value(logits))?;
        if t != targets.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{t} logit columns for {} targets", targets.len()),
            ));
        }
        if t == 0 {
            return Err(Error::Empty("softmax_cross_entropy targets"));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= q) {
            return Err(Error::OutOfRange {
                what: "target class",
                detail: format!("{bad} not in [0, {q})"),
            });
        }
        let z = self.value(logits).data();
        // rows are classes, so sweep row by row to stay contiguous
        let mut max = z[..t].to_vec();
        for row in z.chunks(t).skip(1) {
            max.iter_mut().zip(row).for_each(|(m, v)| *m = m.max(*v));
        }
        let mut probs = Vec::with_capacity(q * t);
        let mut sum = vec![0.0; t];
        for row in z.chunks(t) {
            for ((v, m), acc) in row.iter().zip(&max).zip(sum.iter_mut()) {
                let e = (v - m).exp();
                *acc += e;
                probs.push(e);
            }
        }
        let mut total = 0.0;
        for (col, &target) in targets.iter().enumerate() {
            total += max[col] + sum[col].ln() - z[target * t + col];
        }
        let out = Tensor::scalar(total / t as f64);
        check_finite("softmax_cross_entropy", &out)?;
        let rg = self.rg(logits);
        if !rg {
            return Ok(self.push(out, Op::Leaf, false));
        }
        for prow in probs.chunks_mut(t) {
            prow.iter_mut().zip(&sum).for_each(|(p, s)| *p /= s);
        }
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let norm = tx.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= f64::MIN_POSITIVE {
            return Err(Error::Degenerate("l2_normalize of a zero vector".into()));
        }
        let data = tx.data().iter().map(|v| v / norm).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::L2Normalize(x), rg))
    }

    /// Columns `start..start + len` of `x[C x T]`.
    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, t) = dims2("slice_time", self.value(x))?;
        if start + len > t {
            return Err(Error::shape(
                "slice_time",
                format!("columns {start}..{} of {t}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * len);
        for row in 0..c {
            data.extend_from_slice(&src[row * t + start..row * t + start + len]);
        }
        let out = Tensor::new(vec![c, len], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceTime { x, start }, rg))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != tx.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} into {shape:?}", tx.shape()),
            ));
        }
        let out = Tensor::new(shape.to_vec(), tx.data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients of every
    /// trainable parameter reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at node {id}")));
            }
            self.backprop_node(node, &g, &mut grads)?;
            if let Op::Param(name) = &node.op {
                out.accumulate(name, Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(buf) = self.grad_buf(grads, v) {
                        buf.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::AddBias(x, b) => {
                let (_, t) = self.value(*x).dims2().expect("checked in forward");
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for (d, row) in buf.iter_mut().zip(g.chunks(t.max(1))) {
                        *d += row.iter().sum::<f64>();
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += f * s);
                }
            }
            Op::Sum(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanTime(x) => {
                let (_, t) = self.value(*x).dims2().expect("checked in forward");
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (row, gc) in buf.chunks_mut(t).zip(g) {
                        row.iter_mut().for_each(|d| *d += gc / t as f64);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((d, s), v) in buf.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Gated { a, b, th, sg } => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for (((d, s), t), y) in buf.iter_mut().zip(g).zip(th).zip(sg) {
                        *d += s * (1.0 - t * t) * y;
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for (((d, s), t), y) in buf.iter_mut().zip(g).zip(th).zip(sg) {
                        *d += s * t * y * (1.0 - y);
                    }
                }
            }
            Op::MatVec(w, v) => {
                let (r, c) = self.value(*w).dims2().expect("checked in forward");
                let (wv, vv) = (self.value(*w).data(), self.value(*v).data());
                if let Some(buf) = self.grad_buf(grads, *w) {
                    for (row, gr) in buf.chunks_mut(c).zip(g) {
                        row.iter_mut().zip(vv).for_each(|(d, x)| *d += gr * x);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *v) {
                    for (row, gr) in wv.chunks(c).zip(g).take(r) {
                        buf.iter_mut().zip(row).for_each(|(d, x)| *d += gr * x);
                    }
                }
            }
            Op::CausalConv { x, w, dilation } => {
                let d = self.conv_dims("causal_conv1d", *x, *w, false)?;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(buf) = self.grad_buf(grads, *x) {
                    kernels::causal_conv_backward(d, *dilation, xv, wv, g, Some(buf), None);
                }
                if let Some(buf) = self.grad_buf(grads, *w) {
                    kernels::causal_conv_backward(d, *dilation, xv, wv, g, None, Some(buf));
                }
            }
            Op::StridedConv { x, w, stride } => {
                let d = self.conv_dims("strided_conv1d", *x, *w, false)?;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(buf) = self.grad_buf(grads, *x) {
                    kernels::strided_conv_backward(d, *stride, xv, wv, g, Some(buf), None);
                }
                if let Some(buf) = self.grad_buf(grads, *w) {
                    kernels::strided_conv_backward(d, *stride, xv, wv, g, None, Some(buf));
                }
            }
            Op::TransposedConv { x, w, stride } => {
                let d = self.conv_dims("transposed_conv1d", *x, *w, true)?;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(buf) = self.grad_buf(grads, *x) {
                    kernels::transposed_conv_backward(d, *stride, xv, wv, g, Some(buf), None);
                }
                if let Some(buf) = self.grad_buf(grads, *w) {
                    kernels::transposed_conv_backward(d, *stride, xv, wv, g, None, Some(buf));
                }
            }
            Op::Embedding { table, index } => {
                let (_, dim) = self.value(*table).dims2().expect("checked in forward");
                if let Some(buf) = self.grad_buf(grads, *table) {
                    let row = &mut buf[index * dim..(index + 1) * dim];
                    row.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::GatherColumns { table, indices } => {
                let (_, q) = self.value(*table).dims2().expect("checked in forward");
                let t = indices.len();
                if t > 0 {
                    if let Some(buf) = self.grad_buf(grads, *table) {
                        for (row, grow) in g.chunks(t).enumerate() {
                            let base = row * q;
                            for (s, &i) in grow.iter().zip(indices) {
                                buf[base + i] += s;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let (_, t) = self.value(*logits).dims2().expect("checked in forward");
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    let scale = g[0] / t as f64;
                    buf.iter_mut().zip(probs).for_each(|(d, p)| *d += scale * p);
                    for (col, &target) in targets.iter().enumerate() {
                        buf[target * t + col] -= scale;
                    }
                }
            }
            Op::SliceTime { x, start } => {
                let (_, t) = self.value(*x).dims2().expect("checked in forward");
                let (_, len) = node.value.dims2().expect("rank 2");
                if len > 0 {
                    if let Some(buf) = self.grad_buf(grads, *x) {
                        for (row, grow) in g.chunks(len).enumerate() {
                            let dst = &mut buf[row * t + start..row * t + start + len];
                            dst.iter_mut().zip(grow).for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::L2Normalize(x) => {
                let xv = self.value(*x).data();
                let norm = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((d, s), yi) in buf.iter_mut().zip(g).zip(y) {
                        *d += (s - yi * dot) / norm;
                    }
                }
            }
        }
        Ok(())
    }

    /// Lazily allocated gradient buffer for `v`, or `None` if `v` does not
    /// require a gradient.
    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }
}
