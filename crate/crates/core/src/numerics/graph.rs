//! Tape-style reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so every node's parents have
//! smaller indices and a single reverse sweep over the node list is a valid
//! topological backward pass. Each node is visited at most once.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{NumericsError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchedMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        src: Var,
        rows: Vec<usize>,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        // d loss / d logits, precomputed in the forward pass.
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of leaf nodes produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// A computation graph recording every op for reverse-mode differentiation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
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

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var, NumericsError> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        // Constant subgraphs never need their backward records.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a[.., k] · b[k, n]`, treating every leading axis of `a` as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (k, n) = bv.dims2()?;
        if av.last_dim() != k || av.ndim() < 2 {
            return Err(mismatch("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let m = av.rows();
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, av.data(), bv.data(), &mut out);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product of `a[N, m, k]` with `b[N, k, n]`, or with
    /// `b[N, n, k]` transposed when `transpose_b` is set.
    pub fn batched_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("batched_matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("batched_matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let a_i = &av.data()[i * m * k..(i + 1) * m * k];
            let b_i = &bv.data()[i * k * n..(i + 1) * k * n];
            let o_i = &mut out[i * m * n..(i + 1) * m * n];
            if transpose_b {
                gemm_nt(m, k, n, a_i, b_i, o_i);
            } else {
                gemm_nn(m, k, n, a_i, b_i, o_i);
            }
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        self.push("batched_matmul", value, Op::BatchedMatMul { a, b, transpose_b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds a vector to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.last_dim();
        if bv.len() != n {
            return Err(mismatch("add_row", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NumericsError> {
        let value = self.value(x).map(|v| v * s);
        self.push("scale", value, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", value, Op::Relu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let n = xv.last_dim();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Layer normalization over the last axis with learned scale and shift.
    ///
    /// Uses the biased variance and `1 / sqrt(var + eps)`, so a constant row
    /// normalizes to zero before the affine transform.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NumericsError> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.last_dim();
        if gv.len() != n || bv.len() != n {
            return Err(mismatch(
                "layer_norm",
                format!("{:?} with gamma {:?} beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Selects rows of `src[.., n]`; the result has shape `[rows.len(), n]`.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let sv = self.value(src);
        let n = sv.last_dim();
        let available = sv.rows();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= available {
                return Err(mismatch("gather_rows", format!("row {} of {}", r, available)));
            }
            data.extend_from_slice(sv.row(r));
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        self.push(
            "gather_rows",
            value,
            Op::Gather {
                src,
                rows: rows.to_vec(),
            },
            &[src],
        )
    }

    /// Looks up embedding rows of `table[vocab, d]` for each token id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        self.gather_rows(table, ids)
    }

    /// `[batch·seq, heads·dh]` → `[batch·heads, seq, dh]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.len() != batch * seq * d || heads == 0 || d % heads != 0 {
            return Err(mismatch(
                "split_heads",
                format!("{:?} as batch {} seq {} heads {}", xv.shape(), batch, seq, heads),
            ));
        }
        let dh = d / heads;
        let src = xv.data();
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for t in 0..seq {
                let row = &src[(b * seq + t) * d..(b * seq + t + 1) * d];
                for h in 0..heads {
                    let dst = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
                }
            }
        }
        let value = Tensor::new(vec![batch * heads, seq, dh], out)?;
        self.push(
            "split_heads",
            value,
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            },
            &[x],
        )
    }

    /// Inverse of [`split_heads`](Self::split_heads).
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || s[0] != batch * heads || s[1] != seq {
            return Err(mismatch(
                "merge_heads",
                format!("{:?} as batch {} seq {} heads {}", s, batch, seq, heads),
            ));
        }
        let dh = s[2];
        let d = dh * heads;
        let mut out = vec![0.0; xv.len()];
        merge_heads_into(xv.data(), &mut out, batch, seq, heads, dh);
        let value = Tensor::new(vec![batch * seq, d], out)?;
        self.push(
            "merge_heads",
            value,
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    /// Mean label-smoothed cross-entropy over the rows of `logits[rows, vocab]`.
    ///
    /// Rows whose target is `None` (padding) are excluded from both the loss
    /// and the normalizer. The smoothed target puts `1 - smoothing` on the
    /// gold token plus `smoothing / vocab` on every token.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], smoothing: f64) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        let (rows, vocab) = lv.dims2()?;
        if targets.len() != rows {
            return Err(mismatch("cross_entropy", format!("{} targets for {} rows", targets.len(), rows)));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(mismatch("cross_entropy", "no non-padding targets".into()));
        }
        let uniform = smoothing / vocab as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; rows * vocab];
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= vocab {
                return Err(mismatch("cross_entropy", format!("target {} with vocab {}", t, vocab)));
            }
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
            let g = &mut grad[r * vocab..(r + 1) * vocab];
            for (v, (&z, gv)) in row.iter().zip(g.iter_mut()).enumerate() {
                let log_p = z - log_z;
                let q = if v == t { 1.0 - smoothing + uniform } else { uniform };
                loss -= q * log_p;
                *gv = (log_p.exp() - q) / count as f64;
            }
        }
        let value = Tensor::scalar(loss / count as f64);
        self.push("cross_entropy", value, Op::CrossEntropy { logits, grad }, &[logits])
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumericsError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(mismatch("backward", format!("non-scalar output {:?}", out.shape())));
        }
        self.backward_with_seed(output, &Tensor::new(out.shape().to_vec(), vec![1.0])?)
    }

    /// Backpropagates an arbitrary output cotangent (vector-Jacobian product).
    pub fn backward_with_seed(&self, output: Var, seed: &Tensor) -> Result<Gradients, NumericsError> {
        if seed.shape() != self.value(output).shape() {
            return Err(mismatch(
                "backward",
                format!("seed {:?} for output {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.data().to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite { op: "backward" });
            }
            self.propagate(node, &g, &mut grads)?;
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), NumericsError> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = bv.dims2()?;
                let m = av.rows();
                self.accumulate(grads, *a, |ga| gemm_nt(m, n, k, g, bv.data(), ga));
                self.accumulate(grads, *b, |gb| gemm_tn(m, k, n, av.data(), g, gb));
            }
            Op::BatchedMatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                let t = *transpose_b;
                self.accumulate(grads, *a, |ga| {
                    for i in 0..batch {
                        let g_i = &g[i * m * n..(i + 1) * m * n];
                        let b_i = &bv.data()[i * k * n..(i + 1) * k * n];
                        let ga_i = &mut ga[i * m * k..(i + 1) * m * k];
                        if t {
                            gemm_nn(m, n, k, g_i, b_i, ga_i);
                        } else {
                            gemm_nt(m, n, k, g_i, b_i, ga_i);
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..batch {
                        let g_i = &g[i * m * n..(i + 1) * m * n];
                        let a_i = &av.data()[i * m * k..(i + 1) * m * k];
                        let gb_i = &mut gb[i * k * n..(i + 1) * k * n];
                        if t {
                            gemm_tn(m, n, k, g_i, a_i, gb_i);
                        } else {
                            gemm_tn(m, k, n, a_i, g_i, gb_i);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, |gx| add_into(gx, g));
                self.accumulate(grads, *bias, |gb| {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *o += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av.data()) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, |gx| {
                    for (o, gi) in gx.iter_mut().zip(g) {
                        *o += gi * s;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |gx| {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv.data()) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = y.last_dim();
                self.accumulate(grads, *x, |gx| {
                    for ((gx_row, g_row), y_row) in gx.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n)) {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                            *o += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let n = gv.len();
                self.accumulate(grads, *x, |gx| {
                    for (r, inv) in inv_std.iter().enumerate() {
                        let g_row = &g[r * n..(r + 1) * n];
                        let h_row = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..n {
                            let d = g_row[j] * gv.data()[j];
                            sum_d += d;
                            sum_dh += d * h_row[j];
                        }
                        let gx_row = &mut gx[r * n..(r + 1) * n];
                        for j in 0..n {
                            let d = g_row[j] * gv.data()[j];
                            gx_row[j] += inv / n as f64 * (n as f64 * d - sum_d - h_row[j] * sum_dh);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (g_row, h_row) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((o, gi), hi) in gg.iter_mut().zip(g_row).zip(h_row) {
                            *o += gi * hi;
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for g_row in g.chunks(n) {
                        add_into(gb, g_row);
                    }
                });
            }
            Op::Gather { src, rows } => {
                let n = node.value.last_dim();
                self.accumulate(grads, *src, |gs| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gs[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                    }
                });
            }
            Op::SplitHeads { x, batch, seq, heads } => {
                let dh = node.value.shape()[2];
                self.accumulate(grads, *x, |gx| {
                    let mut merged = vec![0.0; g.len()];
                    merge_heads_into(g, &mut merged, *batch, *seq, *heads, dh);
                    add_into(gx, &merged);
                });
            }
            Op::MergeHeads { x, batch, seq, heads } => {
                let d = node.value.last_dim();
                let dh = d / heads;
                self.accumulate(grads, *x, |gx| {
                    for b in 0..*batch {
                        for t in 0..*seq {
                            let row = &g[(b * seq + t) * d..(b * seq + t + 1) * d];
                            for h in 0..*heads {
                                let dst = ((b * heads + h) * seq + t) * dh;
                                add_into(&mut gx[dst..dst + dh], &row[h * dh..(h + 1) * dh]);
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let s = g[0];
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += s));
            }
            Op::CrossEntropy { logits, grad } => {
                let s = g[0];
                self.accumulate(grads, *logits, |gl| {
                    for (o, gi) in gl.iter_mut().zip(grad) {
                        *o += s * gi;
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

fn merge_heads_into(src: &[f64], out: &mut [f64], batch: usize, seq: usize, heads: usize, dh: usize) {
    let d = dh * heads;
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..seq {
                let from = ((b * heads + h) * seq + t) * dh;
                let to = (b * seq + t) * d + h * dh;
                out[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
