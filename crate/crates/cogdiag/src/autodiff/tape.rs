//! Recording tape for reverse-mode differentiation.
//!
//! Operations are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass that
//! visits every node once. Leaves created with [`Tape::param`] accumulate
//! gradients across repeated [`Tape::backward`] calls until
//! [`Tape::zero_grad`].

use std::sync::Arc;

use rand::Rng;

use super::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms in [`Tape::bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Col(Var, usize),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    SpMM(Arc<SparseMatrix>, Var),
    MeanRows(Var),
    SumAll(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Dropout(Var, Vec<f64>),
    Bce {
        pred: Var,
        labels: Vec<f64>,
        reduction: Reduction,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose [`Tape::dropout`] calls are active.
    pub fn training() -> Self {
        Self {
            nodes: Vec::new(),
            training: true,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: name,
                node: self.nodes.len(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", format!("{:?} · {:?}", va.shape(), vb.shape())));
        }
        let out = va.matmul(vb);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`, the shape of a linear layer with weights stored `out × in`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(shape_err("matmul_bt", format!("{:?} · {:?}ᵀ", va.shape(), vb.shape())));
        }
        let out = va.matmul_bt(vb);
        self.push("matmul_bt", out, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= y;
        }
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1 × m` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", vx.shape(), vb.shape())));
        }
        let mut out = vx.clone();
        let bias = vb.data().to_vec();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        self.push("add_row", out, Op::AddRow(x, b), &[x, b])
    }

    /// Scales row `i` of `x` by `s[i]`, where `s` is `n × 1`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (vx, vs) = (self.value(x), self.value(s));
        if vs.cols() != 1 || vs.rows() != vx.rows() {
            return Err(shape_err("mul_col", format!("{:?} * {:?}", vx.shape(), vs.shape())));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let k = vs.get(r, 0);
            for o in out.row_mut(r) {
                *o *= k;
            }
        }
        self.push("mul_col", out, Op::MulCol(x, s), &[x, s])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        self.push("scale", out, Op::Scale(x, k), &[x])
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", format!("row count {} vs {rows}", v.rows())));
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let v = self.value(*p);
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                offset += v.cols();
            }
        }
        self.push("concat_cols", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Column `j` of `x` as an `n × 1` tensor.
    pub fn col(&mut self, x: Var, j: usize) -> Result<Var> {
        let vx = self.value(x);
        if j >= vx.cols() {
            return Err(shape_err("col", format!("column {j} of {:?}", vx.shape())));
        }
        let vals: Vec<f64> = (0..vx.rows()).map(|r| vx.get(r, j)).collect();
        self.push("col", Tensor::col_vector(&vals), Op::Col(x, j), &[x])
    }

    /// Selects rows of `x` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx: Arc<[usize]> = idx.into();
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.rows()) {
            return Err(shape_err("gather_rows", format!("row {bad} of {:?}", vx.shape())));
        }
        let mut out = Tensor::zeros(idx.len(), vx.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(vx.row(i));
        }
        self.push("gather_rows", out, Op::Gather(x, idx), &[x])
    }

    /// Sums row `r` of `x` into output row `idx[r]`; the output has `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: impl Into<Arc<[usize]>>, rows: usize) -> Result<Var> {
        let idx: Arc<[usize]> = idx.into();
        let vx = self.value(x);
        if idx.len() != vx.rows() {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), vx.rows()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err("scatter_add_rows", format!("target {bad} of {rows}")));
        }
        let mut out = Tensor::zeros(rows, vx.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(vx.row(r)) {
                *o += v;
            }
        }
        self.push("scatter_add_rows", out, Op::ScatterAdd(x, idx), &[x])
    }

    /// Softmax of an `e × 1` column within groups: entry `i` belongs to
    /// segment `seg[i] < segments`.
    pub fn segment_softmax(&mut self, logits: Var, seg: impl Into<Arc<[usize]>>, segments: usize) -> Result<Var> {
        let seg: Arc<[usize]> = seg.into();
        let v = self.value(logits);
        if v.cols() != 1 || v.rows() != seg.len() {
            return Err(shape_err(
                "segment_softmax",
                format!("{:?} with {} segment ids", v.shape(), seg.len()),
            ));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= segments) {
            return Err(shape_err("segment_softmax", format!("segment {bad} of {segments}")));
        }
        let x = v.data();
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x[i]);
        }
        let mut exp: Vec<f64> = seg.iter().enumerate().map(|(i, &s)| (x[i] - max[s]).exp()).collect();
        let mut denom = vec![0.0; segments];
        for (i, &s) in seg.iter().enumerate() {
            denom[s] += exp[i];
        }
        for (i, &s) in seg.iter().enumerate() {
            exp[i] /= denom[s];
        }
        self.push(
            "segment_softmax",
            Tensor::col_vector(&exp),
            Op::SegmentSoftmax(logits, seg, segments),
            &[logits],
        )
    }

    /// Constant sparse matrix times `x`.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if s.cols() != vx.rows() {
            return Err(shape_err(
                "spmm",
                format!("[{}, {}] · {:?}", s.rows(), s.cols(), vx.shape()),
            ));
        }
        let out = s.matmul(vx);
        self.push("spmm", out, Op::SpMM(s, x), &[x])
    }

    /// Column means as a `1 × m` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() == 0 {
            return Err(shape_err("mean_rows", "empty input".into()));
        }
        let mut out = Tensor::zeros(1, vx.cols());
        for r in 0..vx.rows() {
            for (o, &v) in out.row_mut(0).iter_mut().zip(vx.row(r)) {
                *o += v;
            }
        }
        let n = vx.rows() as f64;
        for o in out.data_mut() {
            *o /= n;
        }
        self.push("mean_rows", out, Op::MeanRows(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(x), &[x])
    }

    /// Inverted dropout with drop probability `p`. Identity (the same node)
    /// when the tape is not in training mode or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Usage(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push("dropout", out, Op::Dropout(x, mask), &[x])
    }

    /// Binary cross-entropy of probabilities `pred` (`n × 1`) against 0/1
    /// labels, with predictions clamped to `[ε, 1 − ε]`.
    pub fn bce_loss(&mut self, pred: Var, labels: &[f64], reduction: Reduction) -> Result<Var> {
        let vp = self.value(pred);
        if vp.cols() != 1 || vp.rows() != labels.len() {
            return Err(shape_err(
                "bce_loss",
                format!("{:?} against {} labels", vp.shape(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(shape_err("bce_loss", "empty batch".into()));
        }
        let mut total = 0.0;
        for (&y, &r) in vp.data().iter().zip(labels) {
            total += bce(y, r);
        }
        if reduction == Reduction::Mean {
            total /= labels.len() as f64;
        }
        self.push(
            "bce_loss",
            Tensor::scalar(total),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
                reduction,
            },
            &[pred],
        )
    }

    /// Back-propagates from a scalar node and adds the result into the
    /// gradient of every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let slot = &mut self.nodes[i].grad;
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                op => {
                    let contributions = self.local_grads(op, &node.value, &g);
                    for (v, t) in contributions {
                        if !self.nodes[v.0].requires_grad {
                            continue;
                        }
                        match &mut adj[v.0] {
                            Some(acc) => acc.add_assign(&t),
                            slot @ None => *slot = Some(t),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node with respect to its inputs.
    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut res = Vec::new();
                if needs(a) {
                    res.push((*a, g.matmul_bt(val(b))));
                }
                if needs(b) {
                    res.push((*b, val(a).matmul_at(g)));
                }
                res
            }
            Op::MatMulBt(a, b) => {
                let mut res = Vec::new();
                if needs(a) {
                    res.push((*a, g.matmul(val(b))));
                }
                if needs(b) {
                    res.push((*b, g.matmul_at(val(a))));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let ga = elementwise(g, val(b), |x, y| x * y);
                let gb = elementwise(g, val(a), |x, y| x * y);
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRow(x, b) => {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![(*x, g.clone()), (*b, gb)]
            }
            Op::MulCol(x, s) => {
                let (vx, vs) = (val(x), val(s));
                let mut gx = g.clone();
                let mut gs = Tensor::zeros(vs.rows(), 1);
                for r in 0..g.rows() {
                    let k = vs.get(r, 0);
                    gs.set(r, 0, super::tensor::dot(g.row(r), vx.row(r)));
                    for o in gx.row_mut(r) {
                        *o *= k;
                    }
                }
                vec![(*x, gx), (*s, gs)]
            }
            Op::Scale(x, k) => vec![(*x, g.map(|v| v * k))],
            Op::Concat(parts) => {
                let mut res = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    res.push((*p, gp));
                }
                res
            }
            Op::Col(x, j) => {
                let vx = val(x);
                let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                for r in 0..vx.rows() {
                    gx.set(r, *j, g.get(r, 0));
                }
                vec![(*x, gx)]
            }
            Op::Gather(x, idx) => {
                let vx = val(x);
                let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![(*x, gx)]
            }
            Op::ScatterAdd(x, idx) => {
                let mut gx = Tensor::zeros(idx.len(), g.cols());
                for (r, &i) in idx.iter().enumerate() {
                    gx.row_mut(r).copy_from_slice(g.row(i));
                }
                vec![(*x, gx)]
            }
            Op::SegmentSoftmax(x, seg, segments) => {
                let y = out.data();
                let gd = g.data();
                let mut inner = vec![0.0; *segments];
                for (i, &s) in seg.iter().enumerate() {
                    inner[s] += y[i] * gd[i];
                }
                let gx: Vec<f64> = seg
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| y[i] * (gd[i] - inner[s]))
                    .collect();
                vec![(*x, Tensor::col_vector(&gx))]
            }
            Op::SpMM(s, x) => vec![(*x, s.matmul_transposed(g))],
            Op::MeanRows(x) => {
                let vx = val(x);
                let n = vx.rows() as f64;
                let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                for r in 0..vx.rows() {
                    for (o, &v) in gx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = v / n;
                    }
                }
                vec![(*x, gx)]
            }
            Op::SumAll(x) => {
                let vx = val(x);
                vec![(*x, Tensor::filled(vx.rows(), vx.cols(), g.item()))]
            }
            Op::Relu(x) => {
                let gx = elementwise(g, val(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                let gx = elementwise(g, out, |gv, y| gv * y * (1.0 - y));
                vec![(*x, gx)]
            }
            Op::SoftmaxRows(x) => {
                let mut gx = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let inner = super::tensor::dot(y, gr);
                    for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Dropout(x, mask) => {
                let mut gx = g.clone();
                for (o, &m) in gx.data_mut().iter_mut().zip(mask) {
                    *o *= m;
                }
                vec![(*x, gx)]
            }
            Op::Bce {
                pred,
                labels,
                reduction,
            } => {
                let vp = val(pred);
                let scale = match reduction {
                    Reduction::Sum => g.item(),
                    Reduction::Mean => g.item() / labels.len() as f64,
                };
                let gp: Vec<f64> = vp
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&y, &r)| scale * bce_grad(y, r))
                    .collect();
                vec![(*pred, Tensor::col_vector(&gp))]
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked at record time")
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Clamped binary cross-entropy of a single prediction.
#[inline]
pub fn bce(pred: f64, label: f64) -> f64 {
    let y = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(label * y.ln() + (1.0 - label) * (1.0 - y).ln())
}

#[inline]
fn bce_grad(pred: f64, label: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&pred) {
        return 0.0;
    }
    -(label / pred - (1.0 - label) / (1.0 - pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_softmax_and_bce_closed_forms() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).item(), 0.5);

        let x = t.constant(Tensor::row_vector(&[0.0, 0.0]));
        let p = t.softmax_rows(x).unwrap();
        assert_eq!(t.value(p).data(), &[0.5, 0.5]);

        let half = t.constant(Tensor::scalar(0.5));
        let l = t.bce_loss(half, &[1.0], Reduction::Sum).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn linear_map_gradient_is_the_input() {
        // loss = sum(W·x) with x fixed: dL/dW[i][j] = x[j]
        let mut t = Tape::new();
        let w = t.param(Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
        let x = t.constant(Tensor::col_vector(&[1.0, 2.0, -3.0]));
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum_all(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[1.0, 2.0, -3.0, 1.0, 2.0, -3.0]);
    }

    #[test]
    fn repeated_backward_accumulates_exactly() {
        let mut t = Tape::new();
        let w = t.param(Tensor::row_vector(&[0.3, -1.7, 2.2]));
        let s = t.sigmoid(w).unwrap();
        let loss = t.sum_all(s).unwrap();
        t.backward(loss).unwrap();
        let once = t.grad(w).unwrap().clone();
        t.backward(loss).unwrap();
        let twice = t.grad(w).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        t.zero_grad();
        assert!(t.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(Tensor::row_vector(&[1.0, 2.0]));
        assert!(matches!(t.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        match t.matmul(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
        match t.add_row(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "add_row"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_results_are_reported_with_the_node() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(f64::MAX));
        let err = t.scale(a, 10.0).unwrap_err();
        assert!(matches!(err, Error::Numeric { op: "scale", node: 1 }));
    }

    #[test]
    fn dropout_is_identity_outside_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(&[1.0, 2.0, 3.0]));
        assert_eq!(t.dropout(x, 0.5, &mut rng).unwrap(), x);

        let mut t = Tape::training();
        let x = t.constant(Tensor::row_vector(&[1.0; 64]));
        let y = t.dropout(x, 0.5, &mut rng).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(t.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn bce_clamps_saturated_predictions() {
        assert!(bce(1.0, 1.0) < 1e-6);
        assert!(bce(0.0, 1.0).is_finite());
        assert_eq!(bce_grad(1.0, 1.0), 0.0);
    }
}
