//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation in creation order; [`Graph::backward`]
//! replays the tape once in reverse, accumulating gradients by the chain
//! rule. Creation order is a topological order by construction, so the
//! reverse sweep visits each node exactly once with its output gradient
//! already complete.
//!
//! Every forward op validates shapes and rejects non-finite outputs. All
//! reductions use a fixed accumulation order, so a graph evaluated twice on
//! the same inputs is bit-identical.

use std::sync::Arc;

use rand::Rng;

use crate::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Scalar, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef(pub(crate) usize);

enum Value<S> {
    Owned(Tensor<S>),
    Shared(Arc<Tensor<S>>),
}

impl<S> Value<S> {
    fn get(&self) -> &Tensor<S> {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

enum Op<S> {
    Leaf,
    Matmul { a: NodeRef, b: NodeRef },
    MatmulNT { a: NodeRef, b: NodeRef },
    Add { a: NodeRef, b: NodeRef },
    AddRow { a: NodeRef, bias: NodeRef },
    Scale { a: NodeRef, c: f64 },
    Mul { a: NodeRef, b: NodeRef },
    Relu { a: NodeRef },
    SoftmaxRows { a: NodeRef },
    LayerNorm { x: NodeRef, gain: NodeRef, bias: NodeRef },
    Embed { table: NodeRef, ids: Vec<u32> },
    CrossEntropy { logits: NodeRef, targets: Vec<u32>, pad_id: u32, smoothing: f64 },
    Dropout { a: NodeRef, mask: Vec<S> },
    SliceCols { a: NodeRef, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeRef> },
    SumAll { a: NodeRef },
}

struct Node<S> {
    value: Value<S>,
    grad: Option<Tensor<S>>,
    requires_grad: bool,
    op: Op<S>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeRef) -> &Tensor<S> {
        self.nodes[id.0].value.get()
    }

    pub fn grad(&self, id: NodeRef) -> Option<&Tensor<S>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeRef) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> NodeRef {
        self.push(Value::Owned(t), requires_grad, Op::Leaf)
    }

    /// Leaf sharing an existing tensor without copying its data. Model
    /// parameters enter per-step graphs through this.
    pub fn shared_leaf(&mut self, t: &Arc<Tensor<S>>, requires_grad: bool) -> NodeRef {
        self.push(Value::Shared(Arc::clone(t)), requires_grad, Op::Leaf)
    }

    fn push(&mut self, value: Value<S>, requires_grad: bool, op: Op<S>) -> NodeRef {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeRef(self.nodes.len() - 1)
    }

    fn push_op(&mut self, name: &'static str, t: Tensor<S>, op: Op<S>) -> Result<NodeRef, TensorError> {
        if !t.is_all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Matmul { a, b }
            | Op::MatmulNT { a, b }
            | Op::Add { a, b }
            | Op::Mul { a, b } => self.needs(*a) || self.needs(*b),
            Op::AddRow { a, bias } => self.needs(*a) || self.needs(*bias),
            Op::Scale { a, .. }
            | Op::Relu { a }
            | Op::SoftmaxRows { a }
            | Op::Dropout { a, .. }
            | Op::SliceCols { a, .. }
            | Op::SumAll { a } => self.needs(*a),
            Op::LayerNorm { x, gain, bias } => {
                self.needs(*x) || self.needs(*gain) || self.needs(*bias)
            }
            Op::Embed { table, .. } => self.needs(*table),
            Op::CrossEntropy { logits, .. } => self.needs(*logits),
            Op::ConcatCols { parts } => parts.iter().any(|p| self.needs(*p)),
        };
        Ok(self.push(Value::Owned(t), requires_grad, op))
    }

    fn needs(&self, id: NodeRef) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims2(&self, id: NodeRef) -> (usize, usize) {
        let t = self.value(id);
        (t.rows(), t.cols())
    }

    /// `a @ b`, `a` is m x k, `b` is k x n.
    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, TensorError> {
        let (m, ka) = self.dims2(a);
        let (kb, n) = self.dims2(b);
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_acc(self.value(a).data(), self.value(b).data(), out.data_mut(), m, ka, n);
        self.push_op("matmul", out, Op::Matmul { a, b })
    }

    /// `a @ b^T`, `a` is m x k, `b` is n x k.
    pub fn matmul_nt(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, TensorError> {
        let (m, ka) = self.dims2(a);
        let (n, kb) = self.dims2(b);
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), out.data_mut(), m, ka, n);
        self.push_op("matmul_nt", out, Op::MatmulNT { a, b })
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += bv;
        }
        self.push_op("add", out, Op::Add { a, b })
    }

    /// Broadcast-add a row vector to every row of a matrix.
    pub fn add_row(&mut self, a: NodeRef, bias: NodeRef) -> Result<NodeRef, TensorError> {
        let (_, n) = self.dims2(a);
        if self.value(bias).numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        let bias_data = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&bias_data) {
                *o += bv;
            }
        }
        self.push_op("add_row", out, Op::AddRow { a, bias })
    }

    pub fn scale(&mut self, a: NodeRef, c: f64) -> Result<NodeRef, TensorError> {
        let cs = S::from_f64(c);
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = *o * cs;
        }
        self.push_op("scale", out, Op::Scale { a, c })
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = *o * bv;
        }
        self.push_op("mul", out, Op::Mul { a, b })
    }

    pub fn relu(&mut self, a: NodeRef) -> Result<NodeRef, TensorError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            if *o < S::ZERO {
                *o = S::ZERO;
            }
        }
        self.push_op("relu", out, Op::Relu { a })
    }

    /// Row-wise softmax with max subtraction, so arbitrarily large finite
    /// inputs cannot overflow.
    pub fn softmax_rows(&mut self, a: NodeRef) -> Result<NodeRef, TensorError> {
        let n = self.value(a).cols();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        self.push_op("softmax_rows", out, Op::SoftmaxRows { a })
    }

    /// Per-row standardization followed by elementwise affine `gain`/`bias`
    /// (both length-n vectors). Epsilon 1e-5 inside the square root.
    pub fn layer_norm(
        &mut self,
        x: NodeRef,
        gain: NodeRef,
        bias: NodeRef,
    ) -> Result<NodeRef, TensorError> {
        let (m, n) = self.dims2(x);
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(vec![m, n]);
        {
            let xv = self.value(x).data();
            let gv = self.value(gain).data();
            let bv = self.value(bias).data();
            for (row_out, row_in) in out.data_mut().chunks_exact_mut(n).zip(xv.chunks_exact(n)) {
                let (mean, inv_std) = row_moments(row_in);
                for j in 0..n {
                    row_out[j] = (row_in[j] - mean) * inv_std * gv[j] + bv[j];
                }
            }
        }
        self.push_op("layer_norm", out, Op::LayerNorm { x, gain, bias })
    }

    /// Gather rows of `table` by token id.
    pub fn embed(&mut self, table: NodeRef, ids: &[u32]) -> Result<NodeRef, TensorError> {
        let (v, d) = self.dims2(table);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(TensorError::InvalidParameter {
                op: "embed",
                message: format!("token id {bad} out of range for table with {v} rows"),
            });
        }
        let mut out = Tensor::zeros(vec![ids.len(), d]);
        {
            let tv = self.value(table).data();
            for (row, &id) in out.data_mut().chunks_exact_mut(d).zip(ids) {
                row.copy_from_slice(&tv[id as usize * d..(id as usize + 1) * d]);
            }
        }
        self.push_op("embed", out, Op::Embed { table, ids: ids.to_vec() })
    }

    /// Mean negative log-softmax of the target entries over non-pad rows.
    /// `smoothing` mixes the one-hot target with a uniform distribution.
    pub fn cross_entropy(
        &mut self,
        logits: NodeRef,
        targets: &[u32],
        pad_id: u32,
        smoothing: f64,
    ) -> Result<NodeRef, TensorError> {
        let (m, v) = self.dims2(logits);
        if targets.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![m, v],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != pad_id && t as usize >= v) {
            return Err(TensorError::InvalidParameter {
                op: "cross_entropy",
                message: format!("target id {bad} out of range for vocab {v}"),
            });
        }
        let n_valid = targets.iter().filter(|&&t| t != pad_id).count();
        if n_valid == 0 {
            return Err(TensorError::EmptyInput { op: "cross_entropy" });
        }
        let eps = S::from_f64(smoothing);
        let one_m_eps = S::from_f64(1.0 - smoothing);
        let mut total = S::ZERO;
        {
            let lv = self.value(logits).data();
            for (row, &t) in lv.chunks_exact(v).zip(targets) {
                if t == pad_id {
                    continue;
                }
                let (lse, row_sum) = log_sum_exp(row);
                let mean_logit = row_sum / S::from_f64(v as f64);
                total += one_m_eps * (lse - row[t as usize]) + eps * (lse - mean_logit);
            }
        }
        let loss = total / S::from_f64(n_valid as f64);
        self.push_op(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad_id,
                smoothing,
            },
        )
    }

    /// Inverted dropout: surviving entries are scaled by 1/(1-rate) so the
    /// expectation is unchanged. `rate == 0` is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        a: NodeRef,
        rate: f64,
        rng: &mut R,
    ) -> Result<NodeRef, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidParameter {
                op: "dropout",
                message: format!("rate {rate} outside [0, 1)"),
            });
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..self.value(a).numel())
            .map(|_| if rng.gen_bool(rate) { S::ZERO } else { keep_scale })
            .collect();
        let mut out = self.value(a).clone();
        for (o, &mv) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * mv;
        }
        self.push_op("dropout", out, Op::Dropout { a, mask })
    }

    pub fn slice_cols(
        &mut self,
        a: NodeRef,
        start: usize,
        len: usize,
    ) -> Result<NodeRef, TensorError> {
        let (m, n) = self.dims2(a);
        if start + len > n {
            return Err(TensorError::InvalidParameter {
                op: "slice_cols",
                message: format!("columns {start}..{} out of range for width {n}", start + len),
            });
        }
        let mut out = Tensor::zeros(vec![m, len]);
        {
            let av = self.value(a).data();
            for (row_out, row_in) in out.data_mut().chunks_exact_mut(len).zip(av.chunks_exact(n)) {
                row_out.copy_from_slice(&row_in[start..start + len]);
            }
        }
        self.push_op("slice_cols", out, Op::SliceCols { a, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[NodeRef]) -> Result<NodeRef, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_cols" });
        }
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p);
            if pm != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Tensor::zeros(vec![m, n]);
        {
            let data = out.data_mut();
            let mut col = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let pv = self.value(p).data();
                for i in 0..m {
                    data[i * n + col..i * n + col + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
                }
                col += w;
            }
        }
        self.push_op("concat_cols", out, Op::ConcatCols { parts: parts.to_vec() })
    }

    pub fn sum_all(&mut self, a: NodeRef) -> Result<NodeRef, TensorError> {
        let mut total = S::ZERO;
        for &v in self.value(a).data() {
            total += v;
        }
        self.push_op("sum_all", Tensor::scalar(total), Op::SumAll { a })
    }

    /// Scaled dot-product attention: `softmax(q k^T / (temp * sqrt(d)) + mask) v`.
    /// `mask` is additive ([`crate::tensor::MASK_OFF`] marks blocked slots).
    pub fn attention(
        &mut self,
        q: NodeRef,
        k: NodeRef,
        v: NodeRef,
        mask: Option<NodeRef>,
        temp: f64,
    ) -> Result<NodeRef, TensorError> {
        if temp <= 0.0 {
            return Err(TensorError::InvalidParameter {
                op: "attention",
                message: format!("temperature {temp} must be positive"),
            });
        }
        let (_, d) = self.dims2(q);
        let (lk, dk) = self.dims2(k);
        let (lv, _) = self.dims2(v);
        if dk != d || lv != lk {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: self.value(q).shape().to_vec(),
                rhs: self.value(k).shape().to_vec(),
            });
        }
        let mut scores = self.matmul_nt(q, k)?;
        scores = self.scale(scores, 1.0 / (temp * (d as f64).sqrt()))?;
        if let Some(m) = mask {
            scores = self.add(scores, m)?;
        }
        let probs = self.softmax_rows(scores)?;
        self.matmul(probs, v)
    }

    /// Reverse sweep from a scalar loss node. Its own gradient is seeded
    /// with 1; every other tracked node receives the accumulated chain-rule
    /// gradient.
    pub fn backward(&mut self, loss: NodeRef) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::InvalidParameter {
                op: "backward",
                message: format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        if !self.needs(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::filled(
            self.value(loss).shape().to_vec(),
            S::ONE,
        ));
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            self.backprop_node(i, &gout)?;
            self.nodes[i].grad = Some(gout);
        }
        Ok(())
    }

    fn acc_grad(&mut self, id: NodeRef, contrib: Tensor<S>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gv, &cv) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *gv += cv;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    fn backprop_node(&mut self, i: usize, gout: &Tensor<S>) -> Result<(), TensorError> {
        // Ops are matched by value structure; each arm computes the input
        // contributions into fresh tensors, then accumulates.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = self.dims2(a);
                let n = self.value(b).cols();
                if self.needs(a) {
                    let mut da = Tensor::zeros(vec![m, k]);
                    matmul_nt_acc(gout.data(), self.value(b).data(), da.data_mut(), m, n, k);
                    self.acc_grad(a, da);
                }
                if self.needs(b) {
                    let mut db = Tensor::zeros(vec![k, n]);
                    matmul_tn_acc(self.value(a).data(), gout.data(), db.data_mut(), k, m, n);
                    self.acc_grad(b, db);
                }
            }
            Op::MatmulNT { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = self.dims2(a);
                let n = self.value(b).rows();
                if self.needs(a) {
                    let mut da = Tensor::zeros(vec![m, k]);
                    matmul_acc(gout.data(), self.value(b).data(), da.data_mut(), m, n, k);
                    self.acc_grad(a, da);
                }
                if self.needs(b) {
                    let mut db = Tensor::zeros(vec![n, k]);
                    matmul_tn_acc(gout.data(), self.value(a).data(), db.data_mut(), n, m, k);
                    self.acc_grad(b, db);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    self.acc_grad(a, gout.clone());
                }
                if self.needs(b) {
                    self.acc_grad(b, gout.clone());
                }
            }
            Op::AddRow { a, bias } => {
                let (a, bias) = (*a, *bias);
                if self.needs(a) {
                    self.acc_grad(a, gout.clone());
                }
                if self.needs(bias) {
                    let n = self.value(bias).numel();
                    let mut db = Tensor::zeros(self.value(bias).shape().to_vec());
                    for row in gout.data().chunks_exact(n) {
                        for (d, &g) in db.data_mut().iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.acc_grad(bias, db);
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                if self.needs(a) {
                    let cs = S::from_f64(c);
                    let mut da = gout.clone();
                    for v in da.data_mut() {
                        *v = *v * cs;
                    }
                    self.acc_grad(a, da);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let mut da = gout.clone();
                    for (v, &bv) in da.data_mut().iter_mut().zip(self.value(b).data()) {
                        *v = *v * bv;
                    }
                    self.acc_grad(a, da);
                }
                if self.needs(b) {
                    let mut db = gout.clone();
                    for (v, &av) in db.data_mut().iter_mut().zip(self.value(a).data()) {
                        *v = *v * av;
                    }
                    self.acc_grad(b, db);
                }
            }
            Op::Relu { a } => {
                let a = *a;
                if self.needs(a) {
                    let mut da = gout.clone();
                    for (v, &xv) in da.data_mut().iter_mut().zip(self.value(a).data()) {
                        if xv <= S::ZERO {
                            *v = S::ZERO;
                        }
                    }
                    self.acc_grad(a, da);
                }
            }
            Op::SoftmaxRows { a } => {
                let a = *a;
                if self.needs(a) {
                    let n = self.value(NodeRef(i)).cols();
                    let mut da = Tensor::zeros(self.value(a).shape().to_vec());
                    let yv = self.value(NodeRef(i)).data();
                    for ((drow, yrow), grow) in da
                        .data_mut()
                        .chunks_exact_mut(n)
                        .zip(yv.chunks_exact(n))
                        .zip(gout.data().chunks_exact(n))
                    {
                        let inner = dot(grow, yrow);
                        for j in 0..n {
                            drow[j] = yrow[j] * (grow[j] - inner);
                        }
                    }
                    self.acc_grad(a, da);
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let (m, n) = self.dims2(x);
                let inv_n = S::from_f64(1.0 / n as f64);
                let mut dx = Tensor::zeros(vec![m, n]);
                let mut dgain = Tensor::zeros(self.value(gain).shape().to_vec());
                let mut dbias = Tensor::zeros(self.value(bias).shape().to_vec());
                {
                    let xv = self.value(x).data();
                    let gv = self.value(gain).data();
                    for r in 0..m {
                        let row_in = &xv[r * n..(r + 1) * n];
                        let grow = &gout.data()[r * n..(r + 1) * n];
                        let (mean, inv_std) = row_moments(row_in);
                        // normalized row and gain-scaled upstream gradient
                        let mut sum_h = S::ZERO;
                        let mut sum_hx = S::ZERO;
                        for j in 0..n {
                            let xh = (row_in[j] - mean) * inv_std;
                            let h = grow[j] * gv[j];
                            sum_h += h;
                            sum_hx += h * xh;
                            dgain.data_mut()[j] += grow[j] * xh;
                            dbias.data_mut()[j] += grow[j];
                        }
                        let mean_h = sum_h * inv_n;
                        let mean_hx = sum_hx * inv_n;
                        let drow = &mut dx.data_mut()[r * n..(r + 1) * n];
                        for j in 0..n {
                            let xh = (row_in[j] - mean) * inv_std;
                            drow[j] = (grow[j] * gv[j] - mean_h - xh * mean_hx) * inv_std;
                        }
                    }
                }
                if self.needs(x) {
                    self.acc_grad(x, dx);
                }
                if self.needs(gain) {
                    self.acc_grad(gain, dgain);
                }
                if self.needs(bias) {
                    self.acc_grad(bias, dbias);
                }
            }
            Op::Embed { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                if self.needs(table) {
                    let d = self.value(table).cols();
                    let mut dt = Tensor::zeros(self.value(table).shape().to_vec());
                    for (row, &id) in gout.data().chunks_exact(d).zip(&ids) {
                        let dst = &mut dt.data_mut()[id as usize * d..(id as usize + 1) * d];
                        for (dv, &g) in dst.iter_mut().zip(row) {
                            *dv += g;
                        }
                    }
                    self.acc_grad(table, dt);
                }
            }
            Op::CrossEntropy { logits, targets, pad_id, smoothing } => {
                let logits = *logits;
                let (targets, pad_id, smoothing) = (targets.clone(), *pad_id, *smoothing);
                if self.needs(logits) {
                    let (_, v) = self.dims2(logits);
                    let n_valid = targets.iter().filter(|&&t| t != pad_id).count();
                    let g = gout.item() / S::from_f64(n_valid as f64);
                    let eps_term = S::from_f64(smoothing / v as f64);
                    let one_m_eps = S::from_f64(1.0 - smoothing);
                    let mut dl = Tensor::zeros(self.value(logits).shape().to_vec());
                    {
                        let lv = self.value(logits).data();
                        for ((drow, row), &t) in dl
                            .data_mut()
                            .chunks_exact_mut(v)
                            .zip(lv.chunks_exact(v))
                            .zip(&targets)
                        {
                            if t == pad_id {
                                continue;
                            }
                            drow.copy_from_slice(row);
                            softmax_in_place(drow);
                            for p in drow.iter_mut() {
                                *p = (*p - eps_term) * g;
                            }
                            drow[t as usize] = drow[t as usize] - one_m_eps * g;
                        }
                    }
                    self.acc_grad(logits, dl);
                }
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                let da = if self.needs(a) {
                    let mut da = gout.clone();
                    for (v, &mv) in da.data_mut().iter_mut().zip(mask) {
                        *v = *v * mv;
                    }
                    Some(da)
                } else {
                    None
                };
                if let Some(da) = da {
                    self.acc_grad(a, da);
                }
            }
            Op::SliceCols { a, start, len } => {
                let (a, start, len) = (*a, *start, *len);
                if self.needs(a) {
                    let (m, n) = self.dims2(a);
                    let mut da = Tensor::zeros(vec![m, n]);
                    for (drow, grow) in da
                        .data_mut()
                        .chunks_exact_mut(n)
                        .zip(gout.data().chunks_exact(len))
                    {
                        drow[start..start + len].copy_from_slice(grow);
                    }
                    self.acc_grad(a, da);
                }
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let n = self.value(NodeRef(i)).cols();
                let mut col = 0;
                for p in parts {
                    let (pm, pw) = self.dims2(p);
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(vec![pm, pw]);
                        for (r, drow) in dp.data_mut().chunks_exact_mut(pw).enumerate() {
                            drow.copy_from_slice(&gout.data()[r * n + col..r * n + col + pw]);
                        }
                        self.acc_grad(p, dp);
                    }
                    col += pw;
                }
            }
            Op::SumAll { a } => {
                let a = *a;
                if self.needs(a) {
                    let g = gout.item();
                    self.acc_grad(a, Tensor::filled(self.value(a).shape().to_vec(), g));
                }
            }
        }
        Ok(())
    }
}

/// Stable softmax of one row, in place.
pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.max(v);
    }
    let mut sum = S::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// (log sum exp, plain sum) of one row, with max subtraction.
fn log_sum_exp<S: Scalar>(row: &[S]) -> (S, S) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.max(v);
    }
    let mut sum_exp = S::ZERO;
    let mut sum = S::ZERO;
    for &v in row {
        sum_exp += (v - max).exp();
        sum += v;
    }
    (sum_exp.ln() + max, sum)
}

/// (mean, 1/sqrt(var + eps)) of one row; population variance.
fn row_moments<S: Scalar>(row: &[S]) -> (S, S) {
    let inv_n = S::from_f64(1.0 / row.len() as f64);
    let mut mean = S::ZERO;
    for &v in row {
        mean += v;
    }
    mean = mean * inv_n;
    let mut var = S::ZERO;
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    var = var * inv_n;
    let inv_std = S::ONE / (var + S::from_f64(LAYER_NORM_EPS)).sqrt();
    (mean, inv_std)
}

/// Additive causal mask: position i may attend to positions <= i.
pub fn causal_mask<S: Scalar>(len: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(vec![len, len]);
    for i in 0..len {
        for j in i + 1..len {
            t.data_mut()[i * len + j] = S::from_f64(crate::tensor::MASK_OFF);
        }
    }
    t
}

/// Additive key-padding mask of shape `q_len x k_len`: column j is blocked
/// when `key_pad[j]` is true.
pub fn padding_mask<S: Scalar>(q_len: usize, key_pad: &[bool]) -> Tensor<S> {
    let k_len = key_pad.len();
    let mut t = Tensor::zeros(vec![q_len, k_len]);
    for i in 0..q_len {
        for (j, &p) in key_pad.iter().enumerate() {
            if p {
                t.data_mut()[i * k_len + j] = S::from_f64(crate::tensor::MASK_OFF);
            }
        }
    }
    t
}
