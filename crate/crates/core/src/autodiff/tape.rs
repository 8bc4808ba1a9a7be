use std::sync::atomic::{AtomicU64, Ordering};

use super::{gemm, AutodiffError, Matrix, Operand};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    /// Position of the node in its tape's topological order.
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Log1p(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SoftmaxRows(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Matrix, inv_std: Vec<f64> },
    Sum(usize),
    SegmentAttention { q: usize, k: usize, v: usize, seq_len: usize, heads: usize, weights: Vec<f64> },
    FocalLoss { probs: usize, labels: Vec<f64>, weights: Vec<f64>, alpha: f64, gamma: f64, eps: f64 },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log1p(a)
            | Op::GatherRows(a, _)
            | Op::SoftmaxRows(a)
            | Op::Sum(a) => vec![*a],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddRow(a, b) | Op::Hadamard(a, b) => {
                vec![*a, *b]
            }
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::SegmentAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::FocalLoss { probs, .. } => vec![*probs],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it and reverse insertion order is a valid reverse topological order.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    backpropagated: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

type Result<T> = std::result::Result<T, AutodiffError>;

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), backpropagated: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    /// Forward value of `v`.
    ///
    /// Panics if `v` was created by another tape.
    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "tensor belongs to a different tape");
        &self.nodes[v.index].value
    }

    /// Accumulated gradient of `v`, available after [`Tape::backward`] for
    /// nodes that depend on a gradient-requiring leaf.
    ///
    /// Panics if `v` was created by another tape.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        assert_eq!(v.tape, self.id, "tensor belongs to a different tape");
        self.nodes[v.index].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Cached attention weights of a [`Tape::segment_attention`] node, laid
    /// out as `[sequence][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.id {
            return None;
        }
        match &self.nodes[v.index].op {
            Op::SegmentAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Clears all gradients so the tape can be back-propagated again.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backpropagated = false;
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignTensor);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var { tape: self.id, index }
    }

    fn push_op(&mut self, value: Matrix, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|&p| self.nodes[p].requires_grad);
        self.push(value, requires_grad, op)
    }

    fn val(&self, i: usize) -> &Matrix {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.val(ia).matmul(self.val(ib))?;
        Ok(self.push_op(out, Op::MatMul(ia, ib)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).transpose();
        Ok(self.push_op(out, Op::Transpose(ia)))
    }

    fn zip_same_shape(&self, op: &'static str, ia: usize, ib: usize, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (a, b) = (self.val(ia), self.val(ib));
        if a.shape() != b.shape() {
            return Err(AutodiffError::shape(op, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(a.rows(), a.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.zip_same_shape("add", ia, ib, |x, y| x + y)?;
        Ok(self.push_op(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.zip_same_shape("sub", ia, ib, |x, y| x - y)?;
        Ok(self.push_op(out, Op::Sub(ia, ib)))
    }

    /// Adds a `1×n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (xv, bv) = (self.val(ix), self.val(ib));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(AutodiffError::shape("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push_op(out, Op::AddRow(ix, ib)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.zip_same_shape("hadamard", ia, ib, |x, y| x * y)?;
        Ok(self.push_op(out, Op::Hadamard(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x * s);
        Ok(self.push_op(out, Op::Scale(ia, s)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push_op(out, Op::Relu(ia)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(sigmoid);
        Ok(self.push_op(out, Op::Sigmoid(ia)))
    }

    pub fn log1p(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        if self.val(ia).data().iter().any(|&x| !(x > -1.0)) {
            return Err(AutodiffError::InvalidArgument("log1p requires inputs > -1".into()));
        }
        let out = self.val(ia).map(f64::ln_1p);
        Ok(self.push_op(out, Op::Log1p(ia)))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(AutodiffError::InvalidArgument("concat_cols of nothing".into()));
        };
        let rows = self.val(first).rows();
        for &i in &idx {
            if self.val(i).rows() != rows {
                return Err(AutodiffError::shape("concat_cols", self.val(first).shape(), self.val(i).shape()));
            }
        }
        let cols: usize = idx.iter().map(|&i| self.val(i).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &i in &idx {
                let src = self.val(i).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push_op(out, Op::ConcatCols(idx)))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(AutodiffError::InvalidArgument("concat_rows of nothing".into()));
        };
        let cols = self.val(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let m = self.val(i);
            if m.cols() != cols {
                return Err(AutodiffError::shape("concat_rows", self.val(first).shape(), m.shape()));
            }
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push_op(out, Op::ConcatRows(idx)))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let src = self.val(ia);
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(AutodiffError::InvalidArgument(format!(
                "gather_rows index {bad} out of range for {} rows",
                src.rows()
            )));
        }
        let mut out = Matrix::zeros(rows.len(), src.cols());
        for (o, &r) in rows.iter().enumerate() {
            out.row_mut(o).copy_from_slice(src.row(r));
        }
        Ok(self.push_op(out, Op::GatherRows(ia, rows.to_vec())))
    }

    /// Row-wise softmax with per-row max subtraction. `-inf` entries are
    /// allowed (they receive zero weight) provided each row has a finite
    /// entry.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let x = self.val(ia);
        if x.has_nan() {
            return Err(AutodiffError::NonFinite { op: "softmax_rows" });
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(AutodiffError::NonFinite { op: "softmax_rows" });
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push_op(out, Op::SoftmaxRows(ia)))
    }

    /// Per-row normalization to zero mean and unit variance followed by a
    /// learned gain and bias (`1×n` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (xv, gv, bv) = (self.val(ix), self.val(ig), self.val(ib));
        let n = xv.cols();
        if n < 2 {
            return Err(AutodiffError::InvalidArgument("layer_norm needs at least 2 columns".into()));
        }
        if gv.shape() != (1, n) {
            return Err(AutodiffError::shape("layer_norm", xv.shape(), gv.shape()));
        }
        if bv.shape() != (1, n) {
            return Err(AutodiffError::shape("layer_norm", xv.shape(), bv.shape()));
        }
        let mut xhat = Matrix::zeros(xv.rows(), n);
        let mut out = Matrix::zeros(xv.rows(), n);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * gv.data()[c] + bv.data()[c]);
            }
        }
        Ok(self.push_op(out, Op::LayerNorm { x: ix, gain: ig, bias: ib, xhat, inv_std }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.val(ia).sum();
        Ok(self.push_op(Matrix::scalar(s), Op::Sum(ia)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(AutodiffError::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Multi-head scaled dot-product self-attention applied independently to
    /// consecutive blocks of `seq_len` rows.
    ///
    /// `q`, `k`, `v` are `(S·seq_len) × (heads·d_k)`; head `h` reads columns
    /// `h·d_k .. (h+1)·d_k`. Scores are scaled by `1/√d_k`. The output has
    /// the same shape, heads concatenated column-wise.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize) -> Result<Var> {
        let (iq, ik, iv) = (self.check(q)?, self.check(k)?, self.check(v)?);
        let (qm, km, vm) = (self.val(iq), self.val(ik), self.val(iv));
        if qm.shape() != km.shape() {
            return Err(AutodiffError::shape("segment_attention", qm.shape(), km.shape()));
        }
        if qm.shape() != vm.shape() {
            return Err(AutodiffError::shape("segment_attention", qm.shape(), vm.shape()));
        }
        if seq_len == 0 || heads == 0 || qm.rows() % seq_len != 0 || qm.cols() % heads != 0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "segment_attention: {:?} does not split into sequences of {seq_len} with {heads} heads",
                qm.shape()
            )));
        }
        let d = qm.cols();
        let dk = d / heads;
        let n_seq = qm.rows() / seq_len;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut weights = vec![0.0; n_seq * heads * seq_len * seq_len];
        let mut out = Matrix::zeros(qm.rows(), d);
        let (qd, kd, vd) = (qm.data(), km.data(), vm.data());
        for s in 0..n_seq {
            let base = s * seq_len;
            for h in 0..heads {
                let c0 = h * dk;
                let wbase = (s * heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let qi = &qd[(base + i) * d + c0..(base + i) * d + c0 + dk];
                    let wrow = &mut weights[wbase + i * seq_len..wbase + (i + 1) * seq_len];
                    let mut max = f64::NEG_INFINITY;
                    for (j, w) in wrow.iter_mut().enumerate() {
                        let kj = &kd[(base + j) * d + c0..(base + j) * d + c0 + dk];
                        *w = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(*w);
                    }
                    if !max.is_finite() {
                        return Err(AutodiffError::NonFinite { op: "segment_attention" });
                    }
                    let mut total = 0.0;
                    for w in wrow.iter_mut() {
                        *w = (*w - max).exp();
                        total += *w;
                    }
                    for w in wrow.iter_mut() {
                        *w /= total;
                    }
                    let orow = &mut out.data_mut()[(base + i) * d + c0..(base + i) * d + c0 + dk];
                    for (j, &w) in wrow.iter().enumerate() {
                        let vj = &vd[(base + j) * d + c0..(base + j) * d + c0 + dk];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        Ok(self.push_op(out, Op::SegmentAttention { q: iq, k: ik, v: iv, seq_len, heads, weights }))
    }

    /// Mean over rows of the weighted binary focal loss
    /// `-w·α·(1-p_t)^γ·ln p_t`, with `p_t = p` for positives and `1-p`
    /// otherwise. Probabilities are clamped to `[eps, 1-eps]`; the clamp has
    /// zero gradient outside the interval.
    pub fn focal_loss(
        &mut self,
        probs: Var,
        labels: &[f64],
        weights: &[f64],
        alpha: f64,
        gamma: f64,
        eps: f64,
    ) -> Result<Var> {
        let ip = self.check(probs)?;
        let p = self.val(ip);
        if p.cols() != 1 || p.rows() != labels.len() || labels.len() != weights.len() || labels.is_empty() {
            return Err(AutodiffError::InvalidArgument(format!(
                "focal_loss: probabilities {:?}, {} labels, {} weights",
                p.shape(),
                labels.len(),
                weights.len()
            )));
        }
        let n = labels.len() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(labels.iter().zip(weights))
            .map(|(&pi, (&y, &w))| w * focal_term(pi, y, alpha, gamma, eps))
            .sum();
        let op = Op::FocalLoss { probs: ip, labels: labels.to_vec(), weights: weights.to_vec(), alpha, gamma, eps };
        Ok(self.push_op(Matrix::scalar(total / n), op))
    }

    /// Back-propagates from a `1×1` loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.backpropagated {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        let shape = self.val(il).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        self.backpropagated = true;
        if !self.nodes[il].requires_grad {
            return Ok(());
        }
        self.nodes[il].grad = Some(Matrix::scalar(1.0));
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_backward(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (p, g) in contributions {
                debug_assert!(p < i, "parent must precede child");
                let node = &mut self.nodes[p];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each parent that needs one.
    fn local_backward(&self, i: usize, g: &Matrix) -> Vec<(usize, Matrix)> {
        let needs = |p: usize| self.nodes[p].requires_grad;
        let mut out = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if needs(*a) {
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(Operand::plain(g), Operand::t(bv), &mut ga, false);
                    out.push((*a, ga));
                }
                if needs(*b) {
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(Operand::t(av), Operand::plain(g), &mut gb, false);
                    out.push((*b, gb));
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    out.push((*a, g.transpose()));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    out.push((*a, g.clone()));
                }
                if needs(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    out.push((*a, g.clone()));
                }
                if needs(*b) {
                    out.push((*b, g.map(|x| -x)));
                }
            }
            Op::AddRow(x, b) => {
                if needs(*x) {
                    out.push((*x, g.clone()));
                }
                if needs(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    out.push((*b, gb));
                }
            }
            Op::Hadamard(a, b) => {
                if needs(*a) {
                    out.push((*a, zip(g, self.val(*b), |x, y| x * y)));
                }
                if needs(*b) {
                    out.push((*b, zip(g, self.val(*a), |x, y| x * y)));
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    out.push((*a, g.map(|x| x * s)));
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    out.push((*a, zip(g, self.val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })));
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    out.push((*a, zip(g, &node.value, |gx, y| gx * y * (1.0 - y))));
                }
            }
            Op::Log1p(a) => {
                if needs(*a) {
                    out.push((*a, zip(g, self.val(*a), |gx, x| gx / (1.0 + x))));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.val(p).cols();
                    if needs(p) {
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        out.push((p, gp));
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.val(p).shape();
                    if needs(p) {
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        out.push((p, Matrix::from_vec(rows, cols, data).expect("slice sized to shape")));
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(a, rows) => {
                if needs(*a) {
                    let src = self.val(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (o, &r) in rows.iter().enumerate() {
                        for (acc, v) in ga.row_mut(r).iter_mut().zip(g.row(o)) {
                            *acc += v;
                        }
                    }
                    out.push((*a, ga));
                }
            }
            Op::SoftmaxRows(a) => {
                if needs(*a) {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    out.push((*a, ga));
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = self.val(*gain);
                let n = xhat.cols();
                if needs(*x) {
                    let mut gx = Matrix::zeros(xhat.rows(), n);
                    for r in 0..xhat.rows() {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let dxhat: Vec<f64> = gr.iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dh: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / n as f64;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = k * (n as f64 * dxhat[c] - sum_d - hr[c] * sum_dh);
                        }
                    }
                    out.push((*x, gx));
                }
                if needs(*gain) {
                    let mut gg = Matrix::zeros(1, n);
                    for r in 0..xhat.rows() {
                        for ((acc, a), b) in gg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *acc += a * b;
                        }
                    }
                    out.push((*gain, gg));
                }
                if needs(*bias) {
                    let mut gb = Matrix::zeros(1, n);
                    for r in 0..g.rows() {
                        for (acc, a) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += a;
                        }
                    }
                    out.push((*bias, gb));
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let (r, c) = self.val(*a).shape();
                    out.push((*a, Matrix::filled(r, c, g.data()[0])));
                }
            }
            Op::SegmentAttention { q, k, v, seq_len, heads, weights } => {
                let (gq, gk, gv) = self.attention_backward(*q, *k, *v, *seq_len, *heads, weights, g);
                if needs(*q) {
                    out.push((*q, gq));
                }
                if needs(*k) {
                    out.push((*k, gk));
                }
                if needs(*v) {
                    out.push((*v, gv));
                }
            }
            Op::FocalLoss { probs, labels, weights, alpha, gamma, eps } => {
                if needs(*probs) {
                    let p = self.val(*probs);
                    let scale = g.data()[0] / labels.len() as f64;
                    let data = p
                        .data()
                        .iter()
                        .zip(labels.iter().zip(weights))
                        .map(|(&pi, (&y, &w))| scale * w * focal_term_grad(pi, y, *alpha, *gamma, *eps))
                        .collect();
                    out.push((*probs, Matrix::from_vec(p.rows(), 1, data).expect("column sized to labels")));
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: usize,
        k: usize,
        v: usize,
        seq_len: usize,
        heads: usize,
        weights: &[f64],
        g: &Matrix,
    ) -> (Matrix, Matrix, Matrix) {
        let (qm, km, vm) = (self.val(q), self.val(k), self.val(v));
        let d = qm.cols();
        let dk = d / heads;
        let n_seq = qm.rows() / seq_len;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut gq = Matrix::zeros(qm.rows(), d);
        let mut gk = Matrix::zeros(qm.rows(), d);
        let mut gv = Matrix::zeros(qm.rows(), d);
        let (qd, kd, vd, gd) = (qm.data(), km.data(), vm.data(), g.data());
        let mut dw = vec![0.0; seq_len];
        for s in 0..n_seq {
            let base = s * seq_len;
            for h in 0..heads {
                let c0 = h * dk;
                let wbase = (s * heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let wrow = &weights[wbase + i * seq_len..wbase + (i + 1) * seq_len];
                    let go = &gd[(base + i) * d + c0..(base + i) * d + c0 + dk];
                    for j in 0..seq_len {
                        let vj = &vd[(base + j) * d + c0..(base + j) * d + c0 + dk];
                        dw[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let gvj = &mut gv.data_mut()[(base + j) * d + c0..(base + j) * d + c0 + dk];
                        for (acc, x) in gvj.iter_mut().zip(go) {
                            *acc += wrow[j] * x;
                        }
                    }
                    let dot: f64 = wrow.iter().zip(&dw).map(|(a, b)| a * b).sum();
                    let qi = &qd[(base + i) * d + c0..(base + i) * d + c0 + dk];
                    for j in 0..seq_len {
                        let ds = wrow[j] * (dw[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kd[(base + j) * d + c0..(base + j) * d + c0 + dk];
                        let gqi = &mut gq.data_mut()[(base + i) * d + c0..(base + i) * d + c0 + dk];
                        for (acc, x) in gqi.iter_mut().zip(kj) {
                            *acc += ds * x;
                        }
                        let gkj = &mut gk.data_mut()[(base + j) * d + c0..(base + j) * d + c0 + dk];
                        for (acc, x) in gkj.iter_mut().zip(qi) {
                            *acc += ds * x;
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("operands share a shape")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-α(1-p_t)^γ ln p_t` for one sample, `p` clamped to `[eps, 1-eps]`.
pub(crate) fn focal_term(p: f64, y: f64, alpha: f64, gamma: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    let pt = if y > 0.5 { p } else { 1.0 - p };
    -alpha * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Derivative of [`focal_term`] with respect to the unclamped probability.
pub(crate) fn focal_term_grad(p: f64, y: f64, alpha: f64, gamma: f64, eps: f64) -> f64 {
    if p < eps || p > 1.0 - eps {
        return 0.0;
    }
    let positive = y > 0.5;
    let pt = if positive { p } else { 1.0 - p };
    let one_minus = 1.0 - pt;
    let mut d_pt = -alpha * one_minus.powf(gamma) / pt;
    if gamma != 0.0 {
        d_pt += alpha * gamma * one_minus.powf(gamma - 1.0) * pt.ln();
    }
    if positive { d_pt } else { -d_pt }
}
