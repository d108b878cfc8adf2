//! Computation tape: records ops during the forward pass, replays them in
//! reverse for gradients.
//!
//! Nodes are arena-indexed; a `NodeId` is only meaningful on the tape that
//! issued it. Gradients accumulate (+=) so parameters reused across several
//! forward branches (the local query set applied per utterance) sum their
//! contributions.

use super::{
    matmul_into, matmul_nt_into, matmul_tn_into, softmax_rows_into, Result, Tensor, TensorError,
};

/// Handle to a tensor on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    value: Tensor,
    requires_grad: bool,
}

enum Op {
    Matmul { a: NodeId, b: NodeId, out: NodeId },
    MatmulNT { a: NodeId, b: NodeId, out: NodeId },
    Add { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Scale { a: NodeId, c: f64, out: NodeId },
    SoftmaxRows { a: NodeId, out: NodeId },
    Gelu { a: NodeId, out: NodeId },
    Sum { a: NodeId, out: NodeId },
    CrossEntropySum { logits: NodeId, targets: Vec<usize>, out: NodeId },
    EmbedRows { table: NodeId, ids: Vec<usize>, out: NodeId },
    ConcatRows { parts: Vec<NodeId>, out: NodeId },
    SliceRows { a: NodeId, r0: usize, r1: usize, out: NodeId },
}

/// Reverse-mode tape over an arena of tensor nodes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C0: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C1: f64 = 0.044715;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, requires_grad });
        self.grads.push(None);
        id
    }

    /// Register a non-differentiable input (data, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false)
    }

    /// Register a differentiable leaf (parameters).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient for a node, if any flowed to it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::DetachedTensor { id: id.0, len: self.nodes.len() });
        }
        Ok(())
    }

    /// Validate and register an op output. Finiteness is checked before
    /// construction so a poisoned op reports itself, not `Tensor::new`.
    fn finish(
        &mut self,
        op: &'static str,
        dims: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let value = Tensor::new(dims, data)?;
        Ok(self.push(value, requires_grad))
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// Standard matrix product A(m×k)·B(k×n).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{m}x{k} . {k2}x{n}"),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let id = self.finish("matmul", vec![m, n], out, rg)?;
        self.ops.push(Op::Matmul { a, b, out: id });
        Ok(id)
    }

    /// A(m×k)·B(n×k)ᵀ — the attention-score form.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (ta.rows(), ta.cols());
        let (n, k2) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("{m}x{k} . ({n}x{k2})^T"),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let id = self.finish("matmul_nt", vec![m, n], out, rg)?;
        self.ops.push(Op::MatmulNT { a, b, out: id });
        Ok(id)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.dims() != tb.dims() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", ta.dims(), tb.dims()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let dims = ta.dims().to_vec();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let id = self.finish("add", dims, data, rg)?;
        self.ops.push(Op::Add { a, b, out: id });
        Ok(id)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.dims() != tb.dims() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", ta.dims(), tb.dims()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let dims = ta.dims().to_vec();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let id = self.finish("mul", dims, data, rg)?;
        self.ops.push(Op::Mul { a, b, out: id });
        Ok(id)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| c * x).collect();
        let dims = ta.dims().to_vec();
        let rg = self.nodes[a.0].requires_grad;
        let id = self.finish("scale", dims, data, rg)?;
        self.ops.push(Op::Scale { a, c, out: id });
        Ok(id)
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        softmax_rows_into(ta.data(), &mut out, r, c);
        let dims = ta.dims().to_vec();
        let rg = self.nodes[a.0].requires_grad;
        let id = self.finish("softmax_rows", dims, out, rg)?;
        self.ops.push(Op::SoftmaxRows { a, out: id });
        Ok(id)
    }

    /// GELU (tanh approximation) — smooth, so finite differences stay clean.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        let data = ta
            .data()
            .iter()
            .map(|&x| {
                let u = GELU_C0 * (x + GELU_C1 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect();
        let dims = ta.dims().to_vec();
        let rg = self.nodes[a.0].requires_grad;
        let id = self.finish("gelu", dims, data, rg)?;
        self.ops.push(Op::Gelu { a, out: id });
        Ok(id)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let total: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        let id = self.finish("sum", vec![1], vec![total], rg)?;
        self.ops.push(Op::Sum { a, out: id });
        Ok(id)
    }

    /// Summed token cross-entropy: −Σ_t log softmax(logits[t])[targets[t]].
    /// Fused for numerical stability; logits row count must equal target count.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        self.check(logits)?;
        let tl = &self.nodes[logits.0].value;
        let (r, c) = (tl.rows(), tl.cols());
        if r != targets.len() || targets.iter().any(|&t| t >= c) {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_sum",
                detail: format!("{r} logit rows vs {} targets (vocab {c})", targets.len()),
            });
        }
        let mut loss = 0.0;
        for (t, &y) in targets.iter().enumerate() {
            let row = tl.row(t);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            loss += lse - row[y];
        }
        let rg = self.nodes[logits.0].requires_grad;
        let id = self.finish("cross_entropy_sum", vec![1], vec![loss], rg)?;
        self.ops.push(Op::CrossEntropySum { logits, targets, out: id });
        Ok(id)
    }

    /// Gather rows of an embedding table; backward scatter-adds.
    pub fn embed_rows(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        self.check(table)?;
        let tt = &self.nodes[table.0].value;
        let (v, d) = (tt.rows(), tt.cols());
        if ids.is_empty() || ids.iter().any(|&i| i >= v) {
            return Err(TensorError::ShapeMismatch {
                op: "embed_rows",
                detail: format!("{} ids into table of {v} rows", ids.len()),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            data.extend_from_slice(tt.row(i));
        }
        let rg = self.nodes[table.0].requires_grad;
        let id = self.finish("embed_rows", vec![ids.len(), d], data, rg)?;
        self.ops.push(Op::EmbedRows { table, ids, out: id });
        Ok(id)
    }

    /// Row-wise concatenation of matrix nodes.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        for &p in parts {
            self.check(p)?;
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = Tensor::concat_rows(&tensors)?;
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        let id = self.push(value, rg);
        self.ops.push(Op::ConcatRows { parts: parts.to_vec(), out: id });
        Ok(id)
    }

    /// Copy of rows r0..r1.
    pub fn slice_rows(&mut self, a: NodeId, r0: usize, r1: usize) -> Result<NodeId> {
        self.check(a)?;
        let value = self.nodes[a.0].value.slice_rows(r0, r1)?;
        let rg = self.nodes[a.0].requires_grad;
        let id = self.push(value, rg);
        self.ops.push(Op::SliceRows { a, r0, r1, out: id });
        Ok(id)
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, delta: &[f64]) {
        match &mut self.grads[id.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => self.grads[id.0] = Some(delta.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss. Seeds d(loss)/d(loss) = 1, replays the
    /// op record once in reverse, and accumulates gradients on every node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check(loss)?;
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(TensorError::NotScalar { numel });
        }
        self.grads[loss.0] = Some(vec![1.0]);

        // Detach the op record while replaying so gradient writes cannot
        // alias it.
        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }
        self.ops = ops;
        Ok(())
    }

    fn backward_op(&mut self, op: &Op) {
        match op {
            Op::Matmul { a, b, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.cols();
                if self.nodes[a.0].requires_grad {
                    // dA = dOut · Bᵀ
                    let mut d_a = vec![0.0; m * k];
                    matmul_nt_into(&d_out, self.nodes[b.0].value.data(), &mut d_a, m, n, k);
                    self.accumulate(*a, &d_a);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dOut
                    let mut d_b = vec![0.0; k * n];
                    matmul_tn_into(self.nodes[a.0].value.data(), &d_out, &mut d_b, m, k, n);
                    self.accumulate(*b, &d_b);
                }
            }
            Op::MatmulNT { a, b, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.rows();
                if self.nodes[a.0].requires_grad {
                    // dA = dOut · B
                    let mut d_a = vec![0.0; m * k];
                    matmul_into(&d_out, self.nodes[b.0].value.data(), &mut d_a, m, n, k);
                    self.accumulate(*a, &d_a);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = dOutᵀ · A
                    let mut d_b = vec![0.0; n * k];
                    matmul_tn_into(&d_out, self.nodes[a.0].value.data(), &mut d_b, m, n, k);
                    self.accumulate(*b, &d_b);
                }
            }
            Op::Add { a, b, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if self.nodes[a.0].requires_grad {
                    self.accumulate(*a, &d_out);
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(*b, &d_out);
                }
            }
            Op::Mul { a, b, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if self.nodes[a.0].requires_grad {
                    let d_a: Vec<f64> = d_out
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(d, y)| d * y)
                        .collect();
                    self.accumulate(*a, &d_a);
                }
                if self.nodes[b.0].requires_grad {
                    let d_b: Vec<f64> = d_out
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(d, x)| d * x)
                        .collect();
                    self.accumulate(*b, &d_b);
                }
            }
            Op::Scale { a, c, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if self.nodes[a.0].requires_grad {
                    let d_a: Vec<f64> = d_out.iter().map(|d| c * d).collect();
                    self.accumulate(*a, &d_a);
                }
            }
            Op::SoftmaxRows { a, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if !self.nodes[a.0].requires_grad {
                    return;
                }
                let s = self.nodes[out.0].value.clone();
                let (r, c) = (s.rows(), s.cols());
                let mut d_a = vec![0.0; r * c];
                for i in 0..r {
                    let srow = s.row(i);
                    let drow = &d_out[i * c..(i + 1) * c];
                    let dot: f64 = srow.iter().zip(drow).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        d_a[i * c + j] = srow[j] * (drow[j] - dot);
                    }
                }
                self.accumulate(*a, &d_a);
            }
            Op::Gelu { a, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if !self.nodes[a.0].requires_grad {
                    return;
                }
                let x = self.nodes[a.0].value.clone();
                let d_a: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(&d_out)
                    .map(|(&xi, &d)| {
                        let u = GELU_C0 * (xi + GELU_C1 * xi * xi * xi);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * xi * xi);
                        d * (0.5 * (1.0 + t) + 0.5 * xi * sech2 * du)
                    })
                    .collect();
                self.accumulate(*a, &d_a);
            }
            Op::Sum { a, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if !self.nodes[a.0].requires_grad {
                    return;
                }
                let d_a = vec![d_out[0]; self.nodes[a.0].value.numel()];
                self.accumulate(*a, &d_a);
            }
            Op::CrossEntropySum { logits, targets, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if !self.nodes[logits.0].requires_grad {
                    return;
                }
                let tl = self.nodes[logits.0].value.clone();
                let (r, c) = (tl.rows(), tl.cols());
                let mut d_l = vec![0.0; r * c];
                softmax_rows_into(tl.data(), &mut d_l, r, c);
                for (t, &y) in targets.iter().enumerate() {
                    d_l[t * c + y] -= 1.0;
                }
                for v in d_l.iter_mut() {
                    *v *= d_out[0];
                }
                self.accumulate(*logits, &d_l);
            }
            Op::EmbedRows { table, ids, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if !self.nodes[table.0].requires_grad {
                    return;
                }
                let (v, d) = (self.nodes[table.0].value.rows(), self.nodes[table.0].value.cols());
                let mut d_t = vec![0.0; v * d];
                for (t, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        d_t[i * d + j] += d_out[t * d + j];
                    }
                }
                self.accumulate(*table, &d_t);
            }
            Op::ConcatRows { parts, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                let c = self.nodes[out.0].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.nodes[p.0].value.rows();
                    if self.nodes[p.0].requires_grad {
                        let d_p = d_out[offset * c..(offset + rows) * c].to_vec();
                        self.accumulate(p, &d_p);
                    }
                    offset += rows;
                }
            }
            Op::SliceRows { a, r0, r1, out } => {
                let Some(d_out) = self.grads[out.0].clone() else { return };
                if !self.nodes[a.0].requires_grad {
                    return;
                }
                let c = self.nodes[a.0].value.cols();
                let mut d_a = vec![0.0; self.nodes[a.0].value.numel()];
                d_a[r0 * c..r1 * c].copy_from_slice(&d_out);
                self.accumulate(*a, &d_a);
            }
        }
    }
}
