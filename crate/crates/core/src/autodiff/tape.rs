//! Append-only computation tape over dense tensors.
//!
//! Values are computed eagerly as nodes are recorded. `backward` walks the
//! tape in reverse once, accumulating gradients only for nodes that depend
//! on a parameter.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_nt_into, matmul_tn_into, Tensor};
use crate::{AscnError, Result};

/// Norms below this are treated as zero by cosine and norm nodes.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Relu(NodeId),
    ConcatCols(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    Cosine(NodeId, NodeId),
    NormRows(NodeId),
    SegmentMax { input: NodeId, argmax: Vec<usize> },
    ColGroupSum(NodeId, usize),
    LogSoftmax(NodeId),
    Select(NodeId, usize),
    Sum(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> AscnError {
    AscnError::Numerical(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone(), true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let v = Tensor { rows: va.rows, cols: va.cols, data };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let v = Tensor { rows: va.rows, cols: va.cols, data };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let va = self.value(a);
        let v = Tensor {
            rows: va.rows,
            cols: va.cols,
            data: va.data.iter().map(|x| x * s).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, s), v, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.rows {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let v = matmul(va, vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    /// Adds the `1×c` row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows != 1 || vb.cols != va.cols {
            return Err(shape_err("add_row_bias", va.shape(), vb.shape()));
        }
        let mut v = va.clone();
        for r in 0..v.rows {
            for (x, b) in v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&vb.data) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Op::AddRowBias(a, bias), v, rg))
    }

    /// Affine map `x · w + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = Tensor {
            rows: va.rows,
            cols: va.cols,
            data: va.data.iter().map(|x| x.max(0.0)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows != vb.rows {
            return Err(shape_err("concat_cols", va.shape(), vb.shape()));
        }
        let cols = va.cols + vb.cols;
        let mut data = Vec::with_capacity(va.rows * cols);
        for r in 0..va.rows {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let v = Tensor { rows: va.rows, cols, data };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::ConcatCols(a, b), v, rg))
    }

    /// Output row `i` is input row `rows[i]`.
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let va = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= va.rows) {
            return Err(AscnError::Numerical(format!("gather_rows: row {bad} out of {}", va.rows)));
        }
        let mut data = Vec::with_capacity(rows.len() * va.cols);
        for &r in &rows {
            data.extend_from_slice(va.row(r));
        }
        let v = Tensor { rows: rows.len(), cols: va.cols, data };
        let rg = self.rg(&[a]);
        Ok(self.push(Op::GatherRows(a, rows), v, rg))
    }

    /// Cosine similarity between every row of `a` (`r×3`) and every row of
    /// `b` (`k×3`), giving `r×k`. Pairs involving a zero-norm row give 0.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.cols {
            return Err(shape_err("cosine", va.shape(), vb.shape()));
        }
        let na: Vec<f64> = (0..va.rows).map(|i| row_norm(va.row(i))).collect();
        let nb: Vec<f64> = (0..vb.rows).map(|k| row_norm(vb.row(k))).collect();
        let mut v = Tensor::zeros(va.rows, vb.rows);
        for i in 0..va.rows {
            if na[i] < ZERO_NORM {
                continue;
            }
            let ai = va.row(i);
            for k in 0..vb.rows {
                if nb[k] < ZERO_NORM {
                    continue;
                }
                let d: f64 = ai.iter().zip(vb.row(k)).map(|(x, y)| x * y).sum();
                v.data[i * vb.rows + k] = d / (na[i] * nb[k]);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Cosine(a, b), v, rg))
    }

    /// Euclidean norm of each row, as an `r×1` column.
    pub fn norm_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = (0..va.rows).map(|i| row_norm(va.row(i))).collect();
        let v = Tensor { rows: va.rows, cols: 1, data };
        let rg = self.rg(&[a]);
        self.push(Op::NormRows(a), v, rg)
    }

    /// Column-wise max over consecutive groups of `group` rows. Ties go to
    /// the first (lowest) row of the group.
    pub fn segment_max(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let va = self.value(a);
        if group == 0 || !va.rows.is_multiple_of(group) {
            return Err(AscnError::Numerical(format!(
                "segment_max: {} rows not divisible into groups of {group}",
                va.rows
            )));
        }
        let out_rows = va.rows / group;
        let mut v = Tensor::zeros(out_rows, va.cols);
        let mut argmax = vec![0usize; out_rows * va.cols];
        for g in 0..out_rows {
            let base = g * group;
            let out = &mut v.data[g * va.cols..(g + 1) * va.cols];
            let arg = &mut argmax[g * va.cols..(g + 1) * va.cols];
            out.copy_from_slice(va.row(base));
            arg.fill(base);
            for r in base + 1..base + group {
                for ((o, a), &x) in out.iter_mut().zip(arg.iter_mut()).zip(va.row(r)) {
                    if x > *o {
                        *o = x;
                        *a = r;
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SegmentMax { input: a, argmax }, v, rg))
    }

    /// Column-wise max over all rows (`1×c`).
    pub fn max_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let rows = self.value(a).rows;
        self.segment_max(a, rows)
    }

    /// Sums consecutive groups of `group` columns: `r×(j·group) -> r×j`.
    pub fn col_group_sum(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let va = self.value(a);
        if group == 0 || !va.cols.is_multiple_of(group) {
            return Err(AscnError::Numerical(format!(
                "col_group_sum: {} columns not divisible into groups of {group}",
                va.cols
            )));
        }
        let cols = va.cols / group;
        let mut v = Tensor::zeros(va.rows, cols);
        for r in 0..va.rows {
            for (j, chunk) in va.row(r).chunks_exact(group).enumerate() {
                v.data[r * cols + j] = chunk.iter().sum();
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::ColGroupSum(a, group), v, rg))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let mut v = va.clone();
        for r in 0..v.rows {
            let row = &mut v.data[r * v.cols..(r + 1) * v.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(&[a]);
        self.push(Op::LogSoftmax(a), v, rg)
    }

    /// The element at flat index `i`, as `1×1`.
    pub fn select(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = Tensor::scalar(self.value(a).data[i]);
        let rg = self.rg(&[a]);
        self.push(Op::Select(a, i), v, rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), v, rg)
    }

    /// `-log softmax(logits)[label]` for a `1×C` logits row.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let c = self.value(logits).cols;
        if self.value(logits).rows != 1 || label >= c {
            return Err(AscnError::InvalidParam(format!(
                "cross_entropy needs 1×C logits and label < C (label {label}, C {c})"
            )));
        }
        let ls = self.log_softmax(logits);
        let picked = self.select(ls, label);
        Ok(self.scale(picked, -1.0))
    }

    /// Hash of every piecewise branch taken (max winners, rectifier and
    /// zero-norm states). Two evaluations with equal signatures lie on the
    /// same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::SegmentMax { argmax, .. } => argmax.hash(&mut h),
                Op::Relu(a) => {
                    for x in &self.nodes[a.0].value.data {
                        (*x > 0.0).hash(&mut h);
                    }
                }
                Op::Cosine(a, b) => {
                    for id in [a, b] {
                        let t = &self.nodes[id.0].value;
                        for r in 0..t.rows {
                            (row_norm(t.row(r)) < ZERO_NORM).hash(&mut h);
                        }
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse accumulation from a `1×1` output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(AscnError::Numerical("backward needs a scalar output".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Op::Param(p), Some(g)) = (&node.op, &grads[idx]) {
                if g.data.iter().any(|v| !v.is_finite()) {
                    return Err(AscnError::Numerical(format!(
                        "non-finite gradient for parameter {}",
                        p.index()
                    )));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;

        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if wants(id) {
                        slot(grads, &self.nodes, id).add_assign(g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let vb = val(*b);
                    let ga = slot(grads, &self.nodes, *a);
                    for ((x, gv), bv) in ga.data.iter_mut().zip(&g.data).zip(&vb.data) {
                        *x += gv * bv;
                    }
                }
                if wants(*b) {
                    let va = val(*a);
                    let gb = slot(grads, &self.nodes, *b);
                    for ((x, gv), av) in gb.data.iter_mut().zip(&g.data).zip(&va.data) {
                        *x += gv * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    for (x, gv) in slot(grads, &self.nodes, *a).data.iter_mut().zip(&g.data) {
                        *x += gv * s;
                    }
                }
            }
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let vb = val(*b);
                    matmul_nt_into(slot(grads, &self.nodes, *a), g, vb);
                }
                if wants(*b) {
                    let va = val(*a);
                    matmul_tn_into(slot(grads, &self.nodes, *b), va, g);
                }
            }
            Op::AddRowBias(a, b) => {
                if wants(*a) {
                    slot(grads, &self.nodes, *a).add_assign(g);
                }
                if wants(*b) {
                    let gb = slot(grads, &self.nodes, *b);
                    for r in 0..g.rows {
                        for (x, gv) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let out = &node.value;
                    for ((x, gv), o) in slot(grads, &self.nodes, *a).data.iter_mut().zip(&g.data).zip(&out.data) {
                        if *o > 0.0 {
                            *x += gv;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols;
                let cb = val(*b).cols;
                if wants(*a) {
                    let ga = slot(grads, &self.nodes, *a);
                    for r in 0..g.rows {
                        for (x, gv) in ga.data[r * ca..(r + 1) * ca].iter_mut().zip(&g.row(r)[..ca]) {
                            *x += gv;
                        }
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, &self.nodes, *b);
                    for r in 0..g.rows {
                        for (x, gv) in gb.data[r * cb..(r + 1) * cb].iter_mut().zip(&g.row(r)[ca..]) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::GatherRows(a, rows) => {
                if wants(*a) {
                    let ga = slot(grads, &self.nodes, *a);
                    let c = ga.cols;
                    for (i, &r) in rows.iter().enumerate() {
                        for (x, gv) in ga.data[r * c..(r + 1) * c].iter_mut().zip(g.row(i)) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let dims = va.cols;
                let na: Vec<f64> = (0..va.rows).map(|i| row_norm(va.row(i))).collect();
                let nb: Vec<f64> = (0..vb.rows).map(|k| row_norm(vb.row(k))).collect();
                let out = &node.value;
                let mut ga = wants(*a).then(|| Tensor::zeros(va.rows, dims));
                let mut gb = wants(*b).then(|| Tensor::zeros(vb.rows, dims));
                for i in 0..va.rows {
                    if na[i] < ZERO_NORM {
                        continue;
                    }
                    let ai = va.row(i);
                    for k in 0..vb.rows {
                        let gv = g.data[i * vb.rows + k];
                        if nb[k] < ZERO_NORM || gv == 0.0 {
                            continue;
                        }
                        let bk = vb.row(k);
                        let cos = out.data[i * vb.rows + k];
                        let inv = 1.0 / (na[i] * nb[k]);
                        if let Some(ga) = ga.as_mut() {
                            let inv_a2 = 1.0 / (na[i] * na[i]);
                            for d in 0..dims {
                                ga.data[i * dims + d] += gv * (bk[d] * inv - cos * ai[d] * inv_a2);
                            }
                        }
                        if let Some(gb) = gb.as_mut() {
                            let inv_b2 = 1.0 / (nb[k] * nb[k]);
                            for d in 0..dims {
                                gb.data[k * dims + d] += gv * (ai[d] * inv - cos * bk[d] * inv_b2);
                            }
                        }
                    }
                }
                if let Some(ga) = ga {
                    slot(grads, &self.nodes, *a).add_assign(&ga);
                }
                if let Some(gb) = gb {
                    slot(grads, &self.nodes, *b).add_assign(&gb);
                }
            }
            Op::NormRows(a) => {
                if wants(*a) {
                    let va = val(*a);
                    let ga = slot(grads, &self.nodes, *a);
                    for i in 0..va.rows {
                        let n = node.value.data[i];
                        if n < ZERO_NORM {
                            continue;
                        }
                        for (x, av) in ga.data[i * va.cols..(i + 1) * va.cols].iter_mut().zip(va.row(i)) {
                            *x += g.data[i] * av / n;
                        }
                    }
                }
            }
            Op::SegmentMax { input, argmax, .. } => {
                if wants(*input) {
                    let ga = slot(grads, &self.nodes, *input);
                    let c = ga.cols;
                    for (flat, &r) in argmax.iter().enumerate() {
                        ga.data[r * c + flat % c] += g.data[flat];
                    }
                }
            }
            Op::ColGroupSum(a, group) => {
                if wants(*a) {
                    let ga = slot(grads, &self.nodes, *a);
                    for (flat, x) in ga.data.iter_mut().enumerate() {
                        let (r, c) = (flat / (g.cols * group), flat % (g.cols * group));
                        *x += g.data[r * g.cols + c / group];
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let out = &node.value;
                    let ga = slot(grads, &self.nodes, *a);
                    for r in 0..g.rows {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..g.cols {
                            let i = r * g.cols + c;
                            ga.data[i] += g.data[i] - out.data[i].exp() * gsum;
                        }
                    }
                }
            }
            Op::Select(a, i) => {
                if wants(*a) {
                    slot(grads, &self.nodes, *a).data[*i] += g.data[0];
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    for x in slot(grads, &self.nodes, *a).data.iter_mut() {
                        *x += g.data[0];
                    }
                }
            }
        }
    }

    /// Adds the gradient of every parameter node, times `weight`, into the
    /// store's gradient buffers.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore, weight: f64) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                if let Some(g) = grads.grads.get(idx).and_then(|g| g.as_ref()) {
                    let buf = store.grad_mut(p);
                    for (b, v) in buf.data.iter_mut().zip(&g.data) {
                        *b += weight * v;
                    }
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], id: NodeId) -> &'a mut Tensor {
    let v = &nodes[id.0].value;
    grads[id.0].get_or_insert_with(|| Tensor::zeros(v.rows, v.cols))
}

fn row_norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}
