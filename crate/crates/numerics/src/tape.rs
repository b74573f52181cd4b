//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every operation in creation order; [`Tape::backward`]
//! walks it in reverse. Vectors are represented as `1×n` matrices and scalars
//! as `1×1`.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{shape_err, NumericsError, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::{gemm, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Gelu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Abs(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: usize, ids: Vec<usize> },
    ScatterAddRows { src: usize, idx: Vec<usize> },
    ConcatRows(Vec<usize>),
    SliceRows { x: usize, start: usize },
    MeanRows(usize),
    Sum(usize),
    Attention { q: usize, k: usize, v: usize, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: usize, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    BceWithLogits { logits: usize, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Records one computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape bookkeeping")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), op, requires_grad, param: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient (reported under `name`).
    pub fn variable(&self, name: &str, value: Tensor) -> Var<'_> {
        let v = self.push(value, Op::Leaf, true);
        self.nodes.borrow_mut()[v.id].param = Some(name.to_string());
        v
    }

    /// Registers a store parameter as a leaf. Frozen parameters become
    /// constants. Repeated lookups return the same node.
    pub fn param<'t>(&'t self, store: &ParameterStore, name: &str) -> Result<Var<'t>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { tape: self, id });
        }
        let (value, frozen) = store.get_shared(name).ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { value, op: Op::Leaf, requires_grad: !frozen, param: (!frozen).then(|| name.to_string()) });
            nodes.len() - 1
        };
        self.params.borrow_mut().insert(name.to_string(), id);
        Ok(Var { tape: self, id })
    }

    /// Stacks rows of several matrices with equal column counts.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs"));
        }
        let cols = parts[0].cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for p in parts {
            let v = self.value(p.id);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", format!("{} vs {} columns", v.cols(), cols)));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
            rg |= self.rg(p.id);
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(matrix(rows, cols, data), Op::ConcatRows(ids), rg))
    }

    /// Looks up rows of `table` by index.
    pub fn gather<'t>(&'t self, table: Var<'t>, ids: &[usize]) -> Result<Var<'t>> {
        let t = self.value(table.id);
        let (n, d) = dims(&t);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= n {
                return Err(NumericsError::TargetOutOfRange { index: i, vocab: n });
            }
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table.id);
        Ok(self.push(matrix(ids.len(), d, data), Op::Gather { table: table.id, ids: ids.to_vec() }, rg))
    }

    /// `out[idx[i]] += src[i]` into a fresh `n_out × d` matrix.
    pub fn scatter_add_rows<'t>(&'t self, src: Var<'t>, idx: &[usize], n_out: usize) -> Result<Var<'t>> {
        let s = self.value(src.id);
        let (m, d) = dims(&s);
        if idx.len() != m {
            return Err(shape_err("scatter_add_rows", format!("{} indices for {} rows", idx.len(), m)));
        }
        let mut out = vec![0.0; n_out * d];
        for (i, &j) in idx.iter().enumerate() {
            if j >= n_out {
                return Err(shape_err("scatter_add_rows", format!("index {j} >= {n_out}")));
            }
            for (o, x) in out[j * d..(j + 1) * d].iter_mut().zip(s.row(i)) {
                *o += x;
            }
        }
        let rg = self.rg(src.id);
        Ok(self.push(matrix(n_out, d, out), Op::ScatterAddRows { src: src.id, idx: idx.to_vec() }, rg))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `nq×d`, `k` is `nk×d`, `v` is `nk×dv`; both widths must divide
    /// by `heads`. `mask`, when given, is row-major `nq×nk` with `true` for
    /// visible keys. A query with no visible key outputs zeros.
    pub fn attention<'t>(&'t self, q: Var<'t>, k: Var<'t>, v: Var<'t>, heads: usize, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let (qv, kv, vv) = (self.value(q.id), self.value(k.id), self.value(v.id));
        let (nq, d) = dims(&qv);
        let (nk, dk_all) = dims(&kv);
        let (nv, dv) = dims(&vv);
        if heads == 0 || d != dk_all || nk != nv || d % heads != 0 || dv % heads != 0 {
            return Err(shape_err("attention", format!("q {:?}, k {:?}, v {:?}, heads {heads}", qv.shape(), kv.shape(), vv.shape())));
        }
        if let Some(m) = mask {
            if m.len() != nq * nk {
                return Err(shape_err("attention", format!("mask len {} != {}x{}", m.len(), nq, nk)));
            }
        }
        let hd = d / heads;
        let hv = dv / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut probs = vec![0.0; heads * nq * nk];
        let mut out = vec![0.0; nq * dv];
        let mut qh = vec![0.0; nq * hd];
        let mut kh = vec![0.0; nk * hd];
        let mut vh = vec![0.0; nk * hv];
        let mut oh = vec![0.0; nq * hv];
        for h in 0..heads {
            copy_cols(qv.data(), d, h * hd, hd, &mut qh);
            copy_cols(kv.data(), d, h * hd, hd, &mut kh);
            copy_cols(vv.data(), dv, h * hv, hv, &mut vh);
            let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
            gemm(nq, hd, nk, &qh, false, &kh, true, p, 0.0);
            for i in 0..nq {
                let row = &mut p[i * nk..(i + 1) * nk];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    if mask.is_some_and(|m| !m[i * nk + j]) {
                        *s = f64::NEG_INFINITY;
                    } else {
                        *s *= scale;
                        max = max.max(*s);
                    }
                }
                if max == f64::NEG_INFINITY {
                    row.iter_mut().for_each(|s| *s = 0.0);
                    continue;
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                row.iter_mut().for_each(|s| *s /= z);
            }
            gemm(nq, nk, hv, p, false, &vh, false, &mut oh, 0.0);
            for i in 0..nq {
                out[i * dv + h * hv..i * dv + (h + 1) * hv].copy_from_slice(&oh[i * hv..(i + 1) * hv]);
            }
        }
        let rg = self.rg(q.id) || self.rg(k.id) || self.rg(v.id);
        Ok(self.push(matrix(nq, dv, out), Op::Attention { q: q.id, k: k.id, v: v.id, heads, probs }, rg))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    ///
    /// Returns gradients for every non-frozen parameter (and named variable)
    /// reachable from the loss. A tape supports a single backward pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(NumericsError::GraphConsumed);
        }
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.len() != 1 {
            return Err(NumericsError::NotScalar(lv.shape().to_vec()));
        }
        if !lv.all_finite() {
            return Err(NumericsError::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = Gradients::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop(&nodes, id, g, &mut grads, &mut out);
        }
        if !out.all_finite() {
            return Err(NumericsError::NonFinite("backward"));
        }
        Ok(out)
    }
}

fn copy_cols(src: &[f64], width: usize, start: usize, len: usize, dst: &mut [f64]) {
    let rows = dst.len() / len.max(1);
    for i in 0..rows {
        dst[i * len..(i + 1) * len].copy_from_slice(&src[i * width + start..i * width + start + len]);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(nodes: &[Node], grads: &mut [Option<Tensor>], x: usize, g: &Tensor, f: impl Fn(f64, f64) -> f64) {
    if !nodes[x].requires_grad {
        return;
    }
    let xv = &nodes[x].value;
    let data = xv.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect();
    accumulate(grads, nodes, x, Tensor::new(xv.shape().to_vec(), data).unwrap());
}

fn backprop(nodes: &[Node], id: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
    let node = &nodes[id];
    let y = &node.value;
    match &node.op {
        Op::Leaf => {
            if let Some(name) = &node.param {
                out.accumulate(name, &g);
            }
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[*a].requires_grad {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                accumulate(grads, nodes, *a, matrix(m, k, da));
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                accumulate(grads, nodes, *b, matrix(k, n, db));
            }
        }
        Op::MatMulT(a, b) => {
            // y = a·bᵀ with a: m×k, b: n×k
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.rows());
            if nodes[*a].requires_grad {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), false, &mut da, 0.0);
                accumulate(grads, nodes, *a, matrix(m, k, da));
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; n * k];
                gemm(n, m, k, g.data(), true, av.data(), false, &mut db, 0.0);
                accumulate(grads, nodes, *b, matrix(n, k, db));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g);
        }
        Op::AddRow(a, b) => {
            if nodes[*b].requires_grad {
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for i in 0..g.rows() {
                    for (d, x) in db.iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
                let shape = nodes[*b].value.shape().to_vec();
                accumulate(grads, nodes, *b, Tensor::new(shape, db).unwrap());
            }
            accumulate(grads, nodes, *a, g);
        }
        Op::Sub(a, b) => {
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, g.map(|x| -x));
            }
            accumulate(grads, nodes, *a, g);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (Arc::clone(&nodes[*a].value), Arc::clone(&nodes[*b].value));
            if nodes[*a].requires_grad {
                let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, nodes, *a, Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            if nodes[*b].requires_grad {
                let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, nodes, *b, Tensor::new(bv.shape().to_vec(), d).unwrap());
            }
        }
        Op::Min(a, b) => {
            let (av, bv) = (Arc::clone(&nodes[*a].value), Arc::clone(&nodes[*b].value));
            let take_a: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| x <= y).collect();
            if nodes[*a].requires_grad {
                let d = g.data().iter().zip(&take_a).map(|(&x, &t)| if t { x } else { 0.0 }).collect();
                accumulate(grads, nodes, *a, Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            if nodes[*b].requires_grad {
                let d = g.data().iter().zip(&take_a).map(|(&x, &t)| if t { 0.0 } else { x }).collect();
                accumulate(grads, nodes, *b, Tensor::new(bv.shape().to_vec(), d).unwrap());
            }
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, nodes, *a, g.map(|x| x * c));
        }
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g),
        Op::Relu(a) => elementwise(nodes, grads, *a, &g, |x, d| if x > 0.0 { d } else { 0.0 }),
        Op::Gelu(a) => elementwise(nodes, grads, *a, &g, |x, d| {
            let u = GELU_C * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
            d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
        }),
        Op::Tanh(a) => {
            let d = y.data().iter().zip(g.data()).map(|(t, d)| d * (1.0 - t * t)).collect();
            accumulate(grads, nodes, *a, Tensor::new(y.shape().to_vec(), d).unwrap());
        }
        Op::Sigmoid(a) => {
            let d = y.data().iter().zip(g.data()).map(|(s, d)| d * s * (1.0 - s)).collect();
            accumulate(grads, nodes, *a, Tensor::new(y.shape().to_vec(), d).unwrap());
        }
        Op::Abs(a) => elementwise(nodes, grads, *a, &g, |x, d| {
            if x > 0.0 {
                d
            } else if x < 0.0 {
                -d
            } else {
                0.0
            }
        }),
        Op::Softplus(a) => elementwise(nodes, grads, *a, &g, |x, d| d * sigmoid(x)),
        Op::SoftmaxRows(a) => {
            let (r, c) = dims(y);
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                let (yr, gr) = (y.row(i), g.row(i));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dx[i * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, nodes, *a, matrix(r, c, dx));
        }
        Op::LogSoftmaxRows(a) => {
            let (r, c) = dims(y);
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                let (yr, gr) = (y.row(i), g.row(i));
                let gs: f64 = gr.iter().sum();
                for j in 0..c {
                    dx[i * c + j] = gr[j] - yr[j].exp() * gs;
                }
            }
            accumulate(grads, nodes, *a, matrix(r, c, dx));
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let (r, c) = dims(y);
            let gv = Arc::clone(&nodes[*gamma].value);
            if nodes[*gamma].requires_grad || nodes[*beta].requires_grad {
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dg[j] += g.get(i, j) * xhat[i * c + j];
                        db[j] += g.get(i, j);
                    }
                }
                let gs = gv.shape().to_vec();
                accumulate(grads, nodes, *gamma, Tensor::new(gs.clone(), dg).unwrap());
                accumulate(grads, nodes, *beta, Tensor::new(gs, db).unwrap());
            }
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; r * c];
                let n = c as f64;
                for i in 0..r {
                    let xh = &xhat[i * c..(i + 1) * c];
                    let dxh: Vec<f64> = (0..c).map(|j| g.get(i, j) * gv.data()[j]).collect();
                    let m1 = dxh.iter().sum::<f64>() / n;
                    let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..c {
                        dx[i * c + j] = inv_std[i] * (dxh[j] - m1 - xh[j] * m2);
                    }
                }
                accumulate(grads, nodes, *x, matrix(r, c, dx));
            }
        }
        Op::Gather { table, ids } => {
            let tv = &nodes[*table].value;
            let (n, d) = dims(tv);
            let mut dt = vec![0.0; n * d];
            for (i, &row) in ids.iter().enumerate() {
                for (o, x) in dt[row * d..(row + 1) * d].iter_mut().zip(g.row(i)) {
                    *o += x;
                }
            }
            accumulate(grads, nodes, *table, Tensor::new(tv.shape().to_vec(), dt).unwrap());
        }
        Op::ScatterAddRows { src, idx } => {
            let d = g.cols();
            let mut ds = Vec::with_capacity(idx.len() * d);
            for &j in idx {
                ds.extend_from_slice(g.row(j));
            }
            accumulate(grads, nodes, *src, matrix(idx.len(), d, ds));
        }
        Op::ConcatRows(parts) => {
            let c = g.cols();
            let mut offset = 0;
            for &p in parts {
                let r = nodes[p].value.rows();
                if nodes[p].requires_grad {
                    let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                    accumulate(grads, nodes, p, matrix(r, c, slice));
                }
                offset += r;
            }
        }
        Op::SliceRows { x, start } => {
            let xv = &nodes[*x].value;
            let (r, c) = dims(xv);
            let mut dx = vec![0.0; r * c];
            dx[start * c..start * c + g.len()].copy_from_slice(g.data());
            accumulate(grads, nodes, *x, matrix(r, c, dx));
        }
        Op::MeanRows(a) => {
            let xv = &nodes[*a].value;
            let (r, c) = dims(xv);
            let inv = 1.0 / r as f64;
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = g.data()[j] * inv;
                }
            }
            accumulate(grads, nodes, *a, matrix(r, c, dx));
        }
        Op::Sum(a) => {
            let xv = &nodes[*a].value;
            accumulate(grads, nodes, *a, Tensor::full(xv.shape(), g.item()));
        }
        Op::Attention { q, k, v, heads, probs } => {
            attention_backward(nodes, grads, &g, *q, *k, *v, *heads, probs);
        }
        Op::CrossEntropy { logits, targets, weights, probs } => {
            let lv = &nodes[*logits].value;
            let (r, c) = dims(lv);
            let gy = g.item();
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                if weights[i] == 0.0 {
                    continue;
                }
                let w = weights[i] * gy;
                for j in 0..c {
                    dx[i * c + j] = w * probs[i * c + j];
                }
                dx[i * c + targets[i]] -= w;
            }
            accumulate(grads, nodes, *logits, Tensor::new(lv.shape().to_vec(), dx).unwrap());
        }
        Op::BceWithLogits { logits, targets } => {
            let lv = &nodes[*logits].value;
            let gy = g.item();
            let d = lv.data().iter().zip(targets).map(|(&x, &t)| gy * (sigmoid(x) - t)).collect();
            accumulate(grads, nodes, *logits, Tensor::new(lv.shape().to_vec(), d).unwrap());
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(nodes: &[Node], grads: &mut [Option<Tensor>], g: &Tensor, q: usize, k: usize, v: usize, heads: usize, probs: &[f64]) {
    let (qv, kv, vv) = (&nodes[q].value, &nodes[k].value, &nodes[v].value);
    let (nq, d) = dims(qv);
    let nk = kv.rows();
    let dv = vv.cols();
    let (hd, hv) = (d / heads, dv / heads);
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; nq * d];
    let mut dk = vec![0.0; nk * d];
    let mut dvv = vec![0.0; nk * dv];
    let mut qh = vec![0.0; nq * hd];
    let mut kh = vec![0.0; nk * hd];
    let mut vh = vec![0.0; nk * hv];
    let mut goh = vec![0.0; nq * hv];
    let mut dp = vec![0.0; nq * nk];
    let mut tmp_q = vec![0.0; nq * hd];
    let mut tmp_k = vec![0.0; nk * hd];
    let mut tmp_v = vec![0.0; nk * hv];
    for h in 0..heads {
        copy_cols(qv.data(), d, h * hd, hd, &mut qh);
        copy_cols(kv.data(), d, h * hd, hd, &mut kh);
        copy_cols(vv.data(), dv, h * hv, hv, &mut vh);
        copy_cols(g.data(), dv, h * hv, hv, &mut goh);
        let p = &probs[h * nq * nk..(h + 1) * nq * nk];
        if nodes[v].requires_grad {
            gemm(nk, nq, hv, p, true, &goh, false, &mut tmp_v, 0.0);
            for j in 0..nk {
                for c in 0..hv {
                    dvv[j * dv + h * hv + c] += tmp_v[j * hv + c];
                }
            }
        }
        if !(nodes[q].requires_grad || nodes[k].requires_grad) {
            continue;
        }
        gemm(nq, hv, nk, &goh, false, &vh, true, &mut dp, 0.0);
        for i in 0..nq {
            let pr = &p[i * nk..(i + 1) * nk];
            let dr = &mut dp[i * nk..(i + 1) * nk];
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for (dj, pj) in dr.iter_mut().zip(pr) {
                *dj = pj * (*dj - dot) * scale;
            }
        }
        if nodes[q].requires_grad {
            gemm(nq, nk, hd, &dp, false, &kh, false, &mut tmp_q, 0.0);
            for i in 0..nq {
                for c in 0..hd {
                    dq[i * d + h * hd + c] += tmp_q[i * hd + c];
                }
            }
        }
        if nodes[k].requires_grad {
            gemm(nk, nq, hd, &dp, true, &qh, false, &mut tmp_k, 0.0);
            for j in 0..nk {
                for c in 0..hd {
                    dk[j * d + h * hd + c] += tmp_k[j * hd + c];
                }
            }
        }
    }
    accumulate(grads, nodes, q, matrix(nq, d, dq));
    accumulate(grads, nodes, k, matrix(nk, d, dk));
    accumulate(grads, nodes, v, matrix(nk, dv, dvv));
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.cols()
    }

    /// Scalar value of a `1×1` result.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value();
        let rg = self.requires_grad();
        self.tape.push(v.map(f), op, rg)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<(Arc<Tensor>, Arc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok((a, b))
    }

    fn binary(self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, name)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor::new(a.shape().to_vec(), data)?, op, rg))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().matmul(&other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = dims(&a);
        let (n, k2) = dims(&b);
        if k != k2 {
            return Err(shape_err("matmul_t", format!("{:?} x {:?}ᵀ", a.shape(), b.shape())));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), true, &mut out, 0.0);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(matrix(m, n, out), Op::MatMulT(self.id, other.id), rg))
    }

    // Fallible shape-checked arithmetic, so not the operator traits.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn min(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "min", Op::Min(self.id, other.id), |a, b| if a <= b { a } else { b })
    }

    /// Adds a `1×n` (or length-`n`) row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), row.value());
        let c = a.cols();
        if b.len() != c {
            return Err(shape_err("add_row", format!("{:?} + {:?}", a.shape(), b.shape())));
        }
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        let rg = self.requires_grad() || row.requires_grad();
        Ok(self.tape.push(Tensor::new(a.shape().to_vec(), data)?, Op::AddRow(self.id, row.id), rg))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    /// `ln(1 + eˣ)`, computed stably.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let out = v.softmax(v.shape().len().max(1) - 1).expect("last axis exists");
        let rg = self.requires_grad();
        self.tape.push(out, Op::SoftmaxRows(self.id), rg)
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let (r, c) = dims(&v);
        let mut out = v.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.requires_grad();
        self.tape.push(Tensor::new(v.shape().to_vec(), out).unwrap(), Op::LogSoftmaxRows(self.id), rg)
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (v, gv, bv) = (self.value(), gamma.value(), beta.value());
        let (r, c) = dims(&v);
        if gv.len() != c || bv.len() != c {
            return Err(shape_err("layer_norm", format!("{:?} with gamma {:?}", v.shape(), gv.shape())));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = v.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std };
        Ok(self.tape.push(Tensor::new(v.shape().to_vec(), out)?, op, rg))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        let (r, c) = dims(&v);
        if start + len > r {
            return Err(shape_err("slice_rows", format!("{start}+{len} > {r}")));
        }
        let data = v.data()[start * c..(start + len) * c].to_vec();
        let rg = self.requires_grad();
        Ok(self.tape.push(matrix(len, c, data), Op::SliceRows { x: self.id, start }, rg))
    }

    /// Column means, `r×c → 1×c`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let v = self.value();
        let (r, c) = dims(&v);
        if r == 0 {
            return Err(shape_err("mean_rows", "no rows"));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|x| *x /= r as f64);
        let rg = self.requires_grad();
        Ok(self.tape.push(matrix(1, c, out), Op::MeanRows(self.id), rg))
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.value();
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(v.sum()), Op::Sum(self.id), rg)
    }

    /// `Σᵢ wᵢ · (−log softmax(selfᵢ)[targetᵢ])` over rows. Rows with zero
    /// weight are skipped entirely.
    pub fn cross_entropy(self, targets: &[usize], weights: &[f64]) -> Result<Var<'t>> {
        let v = self.value();
        let (r, c) = dims(&v);
        if targets.len() != r || weights.len() != r {
            return Err(shape_err("cross_entropy", format!("{r} rows, {} targets, {} weights", targets.len(), weights.len())));
        }
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            if targets[i] >= c {
                return Err(NumericsError::TargetOutOfRange { index: targets[i], vocab: c });
            }
            if weights[i] == 0.0 {
                continue;
            }
            let row = v.row(i);
            let lse = log_sum_exp(row);
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += weights[i] * (lse - row[targets[i]]);
        }
        let rg = self.requires_grad();
        let op = Op::CrossEntropy { logits: self.id, targets: targets.to_vec(), weights: weights.to_vec(), probs };
        Ok(self.tape.push(Tensor::scalar(loss), op, rg))
    }

    /// Summed binary cross-entropy of `sigmoid(self)` against 0/1 targets.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'t>> {
        let v = self.value();
        if targets.len() != v.len() {
            return Err(shape_err("bce_with_logits", format!("{} logits, {} targets", v.len(), targets.len())));
        }
        let loss = v.data().iter().zip(targets).map(|(&x, &t)| softplus(x) - t * x).sum();
        let rg = self.requires_grad();
        Ok(self.tape.push(Tensor::scalar(loss), Op::BceWithLogits { logits: self.id, targets: targets.to_vec() }, rg))
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
