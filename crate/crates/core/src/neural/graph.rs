//! Reverse-mode tape over 2-D tensors.
//!
//! Every node is a row-major `rows × cols` matrix. Operations record the
//! data their backward pass needs; [`Graph::backward`] walks the tape in
//! reverse creation order and accumulates parameter gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, dot, matmul, matmul_at_acc, matmul_bt};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Input,
    Param(ParamId),
    Gather { table: NodeId, ids: Vec<usize> },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(NodeId),
    Attention { qkv: NodeId, heads: usize, causal: bool, probs: Vec<f64> },
    Dropout { x: NodeId, mask: Vec<f64> },
    SelectRows { x: NodeId, rows: Vec<usize> },
    Transpose(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, row_mask: Vec<bool>, probs: Vec<f64>, factor: f64 },
    Scale(NodeId, f64),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable softmax over the entries where `allowed` holds;
/// disallowed entries get probability zero.
pub fn masked_softmax(logits: &[f64], allowed: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| allowed.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| ok(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if ok(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Log-softmax of one row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

impl<'p> Graph<'p> {
    /// Inference graph: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            dropout_rng: None,
        }
    }

    /// Training graph drawing dropout masks from `rng`.
    pub fn with_dropout(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            dropout_rng: Some(rng),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Hand back the dropout generator so callers can thread its state.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.dropout_rng
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(data),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        match &self.nodes[id.0].value {
            Value::Owned(v) => v,
            Value::Param(p) => &self.params.get(*p).data,
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.shape(id), (1, 1), "not a scalar");
        self.value(id)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attention probabilities `[head][query][key]` of an attention node.
    pub fn attention_probs(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        assert_eq!(data.len(), rows * cols, "input shape");
        self.push(rows, cols, data, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let p = self.params.get(id);
        self.nodes.push(Node {
            rows: p.rows,
            cols: p.cols,
            value: Value::Param(id),
            op: Op::Param(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let (rows, cols) = self.shape(table);
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            assert!(i < rows, "gather index {i} out of {rows}");
            out.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        self.push(ids.len(), cols, out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "add shapes");
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(shape.0, shape.1, out, Op::Add(a, b))
    }

    /// Broadcast-add a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shapes");
        let bias = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_exact_mut(c) {
            chunk.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
        self.push(r, c, out, Op::AddRow(a, row))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let out = matmul(self.value(a), self.value(b), n, k, m);
        self.push(n, m, out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_bt inner dims");
        let out = matmul_bt(self.value(a), self.value(b), n, k, m);
        self.push(n, m, out, Op::MatMulBt(a, b))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c));
        assert_eq!(self.shape(bias), (1, c));
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        self.push(r, c, out, Op::Gelu(x))
    }

    /// Multi-head self-attention over a fused `len × 3d` query/key/value
    /// projection; returns the concatenated `len × d` head outputs.
    pub fn attention(&mut self, qkv: NodeId, heads: usize, causal: bool) -> NodeId {
        let (len, three_d) = self.shape(qkv);
        assert_eq!(three_d % 3, 0);
        let d = three_d / 3;
        assert_eq!(d % heads, 0, "d_model divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let x = self.value(qkv);
        let mut probs = vec![0.0; heads * len * len];
        let mut out = vec![0.0; len * d];
        let mut scores = vec![0.0; len];
        for h in 0..heads {
            for t in 0..len {
                let q = &x[t * three_d + h * dh..t * three_d + (h + 1) * dh];
                let upto = if causal { t + 1 } else { len };
                let mut max = f64::NEG_INFINITY;
                for s in 0..upto {
                    let k = &x[s * three_d + d + h * dh..s * three_d + d + (h + 1) * dh];
                    scores[s] = dot(q, k) * scale;
                    max = max.max(scores[s]);
                }
                let mut z = 0.0;
                for sc in scores.iter_mut().take(upto) {
                    *sc = (*sc - max).exp();
                    z += *sc;
                }
                let prow = &mut probs[(h * len + t) * len..(h * len + t + 1) * len];
                let orow = &mut out[t * d + h * dh..t * d + (h + 1) * dh];
                for s in 0..upto {
                    let p = scores[s] / z;
                    prow[s] = p;
                    let v = &x[s * three_d + 2 * d + h * dh..s * three_d + 2 * d + (h + 1) * dh];
                    axpy(p, v, orow);
                }
            }
        }
        self.push(len, d, out, Op::Attention { qkv, heads, causal, probs })
    }

    /// Inverted dropout; the identity on inference graphs or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        let Some(rng) = self.dropout_rng.as_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let (r, c) = self.nodes[x.0].rows_cols();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(r, c, out, Op::Dropout { x, mask })
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> NodeId {
        let (r, c) = self.shape(x);
        let xs = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            assert!(i < r, "row {i} out of {r}");
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        self.push(rows.len(), c, out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let xs = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xs[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(x))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v * s).collect();
        self.push(r, c, out, Op::Scale(x, s))
    }

    /// Row-wise softmax cross-entropy over rows where `row_mask` holds,
    /// restricted to classes where `class_mask` holds (if given).
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        row_mask: &[bool],
        class_mask: Option<&[bool]>,
        reduction: Reduction,
    ) -> Result<NodeId> {
        let (r, c) = self.shape(logits);
        if targets.len() != r || row_mask.len() != r || class_mask.is_some_and(|m| m.len() != c) {
            return Err(Error::Shape(format!("cross-entropy over {r}×{c} logits")));
        }
        let active = row_mask.iter().filter(|m| **m).count();
        if active == 0 {
            return Err(Error::InvalidInput("cross-entropy mask selects no position".into()));
        }
        let factor = match reduction {
            Reduction::Mean => 1.0 / active as f64,
            Reduction::Sum => 1.0,
        };
        let xs = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            if !row_mask[i] {
                continue;
            }
            let t = targets[i];
            if t >= c || class_mask.is_some_and(|m| !m[t]) {
                return Err(Error::InvalidInput(format!("target {t} not an allowed class")));
            }
            let p = masked_softmax(&xs[i * c..(i + 1) * c], class_mask);
            // -log p_t computed from logits for accuracy
            let row = &xs[i * c..(i + 1) * c];
            let ok = |j: usize| class_mask.is_none_or(|m| m[j]);
            let max = (0..c).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..c).filter(|&j| ok(j)).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            probs[i * c..(i + 1) * c].copy_from_slice(&p);
        }
        Ok(self.push(
            1,
            1,
            vec![loss * factor],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                row_mask: row_mask.to_vec(),
                probs,
                factor,
            },
        ))
    }

    /// Backpropagate from scalar `loss`, adding `seed · ∂loss/∂θ` into `grads`.
    /// Returns the loss value.
    pub fn backward_scaled(&self, loss: NodeId, seed: f64, grads: &mut Gradients) -> Result<f64> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![seed]);

        fn acc<'a>(g: &'a mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &'a mut Vec<f64> {
            g[id.0].get_or_insert_with(|| vec![0.0; n])
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    grads.get_mut(*p).iter_mut().zip(&dy).for_each(|(a, b)| *a += b);
                }
                Op::Gather { table, ids } => {
                    let n = self.nodes[table.0].rows * cols;
                    let dt = acc(&mut g, *table, n);
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(1.0, &dy[r * cols..(r + 1) * cols], &mut dt[i * cols..(i + 1) * cols]);
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &dy, acc(&mut g, *a, dy.len()));
                    axpy(1.0, &dy, acc(&mut g, *b, dy.len()));
                }
                Op::AddRow(a, row) => {
                    axpy(1.0, &dy, acc(&mut g, *a, dy.len()));
                    let db = acc(&mut g, *row, cols);
                    for chunk in dy.chunks_exact(cols) {
                        axpy(1.0, chunk, db);
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.shape(*a);
                    let m = cols;
                    // dA = dY · Bᵀ
                    let da = matmul_bt(&dy, self.value(*b), n, m, k);
                    axpy(1.0, &da, acc(&mut g, *a, n * k));
                    // dB = Aᵀ · dY
                    matmul_at_acc(self.value(*a), &dy, acc(&mut g, *b, k * m), n, k, m);
                }
                Op::MatMulBt(a, b) => {
                    let (n, k) = self.shape(*a);
                    let m = cols;
                    // dA = dY · B
                    let da = matmul(&dy, self.value(*b), n, m, k);
                    axpy(1.0, &da, acc(&mut g, *a, n * k));
                    // dB = dYᵀ · A
                    matmul_at_acc(&dy, self.value(*a), acc(&mut g, *b, m * k), n, m, k);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    let mut dx = vec![0.0; rows * cols];
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for i in 0..rows {
                        let dyr = &dy[i * cols..(i + 1) * cols];
                        let xh = &xhat[i * cols..(i + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            let d = dyr[j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                            dg[j] += dyr[j] * xh[j];
                            db[j] += dyr[j];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for j in 0..cols {
                            let d = dyr[j] * gv[j];
                            dx[i * cols + j] = rstd[i] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                    axpy(1.0, &dx, acc(&mut g, *x, rows * cols));
                    axpy(1.0, &dg, acc(&mut g, *gain, cols));
                    axpy(1.0, &db, acc(&mut g, *bias, cols));
                }
                Op::Gelu(x) => {
                    let xs = self.value(*x);
                    let dx = acc(&mut g, *x, dy.len());
                    for ((d, &v), &o) in dx.iter_mut().zip(xs).zip(&dy) {
                        *d += o * gelu_grad(v);
                    }
                }
                Op::Attention { qkv, heads, causal, probs } => {
                    let len = rows;
                    let d = cols;
                    let three_d = 3 * d;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let x = self.value(*qkv);
                    let mut dx = vec![0.0; len * three_d];
                    let mut dp = vec![0.0; len];
                    for h in 0..*heads {
                        for t in 0..len {
                            let upto = if *causal { t + 1 } else { len };
                            let prow = &probs[(h * len + t) * len..(h * len + t + 1) * len];
                            let dout = &dy[t * d + h * dh..t * d + (h + 1) * dh];
                            let mut sum = 0.0;
                            for s in 0..upto {
                                let vo = s * three_d + 2 * d + h * dh;
                                dp[s] = dot(dout, &x[vo..vo + dh]);
                                sum += prow[s] * dp[s];
                                axpy(prow[s], dout, &mut dx[vo..vo + dh]);
                            }
                            let qo = t * three_d + h * dh;
                            for s in 0..upto {
                                let ds = prow[s] * (dp[s] - sum) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let ko = s * three_d + d + h * dh;
                                // dq_t += ds·k_s ; dk_s += ds·q_t
                                for j in 0..dh {
                                    dx[qo + j] += ds * x[ko + j];
                                    dx[ko + j] += ds * x[qo + j];
                                }
                            }
                        }
                    }
                    axpy(1.0, &dx, acc(&mut g, *qkv, len * three_d));
                }
                Op::Dropout { x, mask } => {
                    let dx = acc(&mut g, *x, dy.len());
                    for ((d, o), m) in dx.iter_mut().zip(&dy).zip(mask) {
                        *d += o * m;
                    }
                }
                Op::SelectRows { x, rows: sel } => {
                    let n = self.nodes[x.0].rows * cols;
                    let dx = acc(&mut g, *x, n);
                    for (r, &i) in sel.iter().enumerate() {
                        axpy(1.0, &dy[r * cols..(r + 1) * cols], &mut dx[i * cols..(i + 1) * cols]);
                    }
                }
                Op::Transpose(x) => {
                    // node is rows×cols; source is cols×rows
                    let dx = acc(&mut g, *x, rows * cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[j * rows + i] += dy[i * cols + j];
                        }
                    }
                }
                Op::Scale(x, s) => {
                    axpy(*s, &dy, acc(&mut g, *x, dy.len()));
                }
                Op::CrossEntropy { logits, targets, row_mask, probs, factor } => {
                    let (r, c) = self.shape(*logits);
                    let dl = acc(&mut g, *logits, r * c);
                    let s = dy[0] * factor;
                    for i in 0..r {
                        if !row_mask[i] {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            dl[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
        Ok(self.scalar(loss))
    }

    pub fn backward(&self, loss: NodeId, grads: &mut Gradients) -> Result<f64> {
        self.backward_scaled(loss, 1.0, grads)
    }
}

impl Node {
    fn rows_cols(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}
