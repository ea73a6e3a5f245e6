//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are appended in evaluation order, so the reverse of creation order is a
//! valid topological order for the backward sweep.

use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Mat, Segments};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gather { src: Var, idx: Rc<Vec<usize>> },
    SliceRows { src: Var, start: usize },
    ConcatRows(Vec<Var>),
    Silu(Var),
    Square(Var),
    Exp(Var),
    Softplus(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, rstd: Vec<f64> },
    Attention(Box<AttentionSaved>),
    SegmentSum { x: Var, seg: Rc<Segments> },
    SegmentMean { x: Var, seg: Rc<Segments> },
    RowSum(Var),
    SumAll(Var),
    MeanAll(Var),
    CrossEntropy { logits: Var, targets: Rc<Vec<usize>>, probs: Mat },
}

struct AttentionSaved {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_seg: Rc<Segments>,
    kv_seg: Rc<Segments>,
    /// Softmax probabilities per (segment, head), concatenated row-major.
    probs: Vec<f64>,
    /// Start of each (segment, head) block inside `probs`.
    offsets: Vec<usize>,
}

enum Value {
    Owned(Mat),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

/// Forward-pass recorder bound to a parameter store.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Result of a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of a parameter; `None` if the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params[id.index()].as_ref()
    }

    pub fn node(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    pub fn params(&self) -> &[Option<Mat>] {
        &self.params
    }

    /// Global L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().map(Mat::sum_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(Mat::is_finite)
    }
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
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(p) => self.store.value(*p),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are tracked but never applied.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `1 x cols` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.shape(), (1, xv.cols()), "bias shape mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    /// `out[r] = src[idx[r]]`.
    pub fn gather_rows(&mut self, src: Var, idx: Rc<Vec<usize>>) -> Var {
        let s = self.value(src);
        let mut out = Mat::zeros(idx.len(), s.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(s.row(i));
        }
        self.push(out, Op::Gather { src, idx })
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Var {
        let out = self.value(src).slice_rows(start, len);
        self.push(out, Op::SliceRows { src, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::vstack(&mats);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    /// `ln(1 + e^x)`, numerically stable.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x))
    }

    /// Elementwise clamp; the gradient is zero wherever the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), f64::min);
        self.push(out, Op::Minimum(a, b))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xh[c] * g.data()[c] + b.data()[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Multi-head scaled dot-product attention. Query rows in segment `i` of
    /// `q_seg` attend only to key/value rows in segment `i` of `kv_seg`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, q_seg: Rc<Segments>, kv_seg: Rc<Segments>) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let width = qv.cols();
        assert_eq!(kv.cols(), width, "key width mismatch");
        assert_eq!(vv.cols(), width, "value width mismatch");
        assert_eq!(width % heads, 0, "width not divisible by heads");
        assert_eq!(q_seg.len(), kv_seg.len(), "segment count mismatch");
        assert_eq!(q_seg.total_rows(), qv.rows(), "query segments do not cover rows");
        assert_eq!(kv_seg.total_rows(), kv.rows(), "key segments do not cover rows");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(qv.rows(), width);
        let mut probs = Vec::new();
        let mut offsets = Vec::with_capacity(q_seg.len() * heads);
        let mut scores = Vec::new();
        for s in 0..q_seg.len() {
            let qr = q_seg.range(s);
            let kr = kv_seg.range(s);
            let lk = kr.len();
            for h in 0..heads {
                let c0 = h * dh;
                offsets.push(probs.len());
                for i in qr.clone() {
                    let qrow = &qv.row(i)[c0..c0 + dh];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in kr.clone() {
                        let krow = &kv.row(j)[c0..c0 + dh];
                        let sc = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(sc);
                        scores.push(sc);
                    }
                    let mut denom = 0.0;
                    for sc in &mut scores {
                        *sc = (*sc - max).exp();
                        denom += *sc;
                    }
                    let orow = &mut out.row_mut(i)[c0..c0 + dh];
                    for (jj, j) in kr.clone().enumerate() {
                        let p = if lk > 0 { scores[jj] / denom } else { 0.0 };
                        probs.push(p);
                        let vrow = &vv.row(j)[c0..c0 + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let saved = AttentionSaved { q, k, v, heads, q_seg, kv_seg, probs, offsets };
        self.push(out, Op::Attention(Box::new(saved)))
    }

    /// Per-segment column sums: one output row per segment.
    pub fn segment_sum(&mut self, x: Var, seg: Rc<Segments>) -> Var {
        let out = segment_reduce(self.value(x), &seg, false);
        self.push(out, Op::SegmentSum { x, seg })
    }

    /// Per-segment column means: one output row per segment.
    pub fn segment_mean(&mut self, x: Var, seg: Rc<Segments>) -> Var {
        let out = segment_reduce(self.value(x), &seg, true);
        self.push(out, Op::SegmentMean { x, seg })
    }

    /// Sums each row to a `rows x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Mat::from_vec(xv.rows(), 1, data);
        self.push(out, Op::RowSum(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Mat::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Mat::scalar(xv.sum() / xv.len().max(1) as f64);
        self.push(out, Op::MeanAll(x))
    }

    /// Mean softmax cross-entropy of `logits` rows against class `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<Vec<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "target count mismatch");
        let mut probs = Mat::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + denom.ln();
            total += lse - row[targets[r]];
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let out = Mat::scalar(total / lv.rows().max(1) as f64);
        self.push(out, Op::CrossEntropy { logits, targets, probs })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward() requires a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut params: Vec<Option<Mat>> = (0..self.store.len()).map(|_| None).collect();
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                params[pid] = grads[v.0].clone();
            }
        }
        Gradients { nodes: grads, params }
    }

    fn backward_node(&self, id: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let out = self.value(Var(id));
        match &self.nodes[id].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Mat::zeros(av.rows(), av.cols());
                gemm(g, false, bv, true, &mut da, 0.0);
                accumulate(grads, *a, da);
                let mut db = Mat::zeros(bv.rows(), bv.cols());
                gemm(av, true, g, false, &mut db, 0.0);
                accumulate(grads, *b, db);
            }
            Op::AddBias(x, b) => {
                accumulate(grads, *x, g.clone());
                let mut db = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Gather { src, idx } => {
                let sv = self.value(*src);
                let mut d = Mat::zeros(sv.rows(), sv.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (dd, gg) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *dd += gg;
                    }
                }
                accumulate(grads, *src, d);
            }
            Op::SliceRows { src, start } => {
                let sv = self.value(*src);
                let mut d = Mat::zeros(sv.rows(), sv.cols());
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(grads, *src, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    accumulate(grads, *p, g.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::Silu(x) => {
                let d = g.zip_map(self.value(*x), |gg, v| {
                    let s = sigmoid(v);
                    gg * s * (1.0 + v * (1.0 - s))
                });
                accumulate(grads, *x, d);
            }
            Op::Square(x) => accumulate(grads, *x, g.zip_map(self.value(*x), |gg, v| 2.0 * gg * v)),
            Op::Exp(x) => accumulate(grads, *x, g.zip_map(out, |gg, y| gg * y)),
            Op::Softplus(x) => accumulate(grads, *x, g.zip_map(self.value(*x), |gg, v| gg * sigmoid(v))),
            Op::Clamp { x, lo, hi } => {
                let d = g.zip_map(self.value(*x), |gg, v| if v < *lo || v > *hi { 0.0 } else { gg });
                accumulate(grads, *x, d);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                for i in 0..g.len() {
                    if av.data()[i] <= bv.data()[i] {
                        db.data_mut()[i] = 0.0;
                    } else {
                        da.data_mut()[i] = 0.0;
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = self.value(*gamma);
                let (rows, cols) = g.shape();
                let mut dx = Mat::zeros(rows, cols);
                let mut dg = Mat::zeros(1, cols);
                let mut db = Mat::zeros(1, cols);
                let n = cols as f64;
                for r in 0..rows {
                    let gr = g.row(r);
                    let xh = xhat.row(r);
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for c in 0..cols {
                        dg.data_mut()[c] += gr[c] * xh[c];
                        db.data_mut()[c] += gr[c];
                        let dxh = gr[c] * gv.data()[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                    }
                    let dxr = dx.row_mut(r);
                    for c in 0..cols {
                        let dxh = gr[c] * gv.data()[c];
                        dxr[c] = rstd[r] / n * (n * dxh - sum_dxh - xh[c] * sum_dxh_xh);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dg);
                accumulate(grads, *beta, db);
            }
            Op::Attention(saved) => self.attention_backward(saved, g, grads),
            Op::SegmentSum { x, seg } | Op::SegmentMean { x, seg } => {
                let mean = matches!(self.nodes[id].op, Op::SegmentMean { .. });
                let xv = self.value(*x);
                let mut d = Mat::zeros(xv.rows(), xv.cols());
                for s in 0..seg.len() {
                    let range = seg.range(s);
                    let w = if mean { 1.0 / range.len().max(1) as f64 } else { 1.0 };
                    for r in range {
                        for (dd, gg) in d.row_mut(r).iter_mut().zip(g.row(s)) {
                            *dd = gg * w;
                        }
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let mut d = Mat::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let gr = g.data()[r];
                    d.row_mut(r).iter_mut().for_each(|v| *v = gr);
                }
                accumulate(grads, *x, d);
            }
            Op::SumAll(x) => {
                let (r, c) = self.shape(*x);
                accumulate(grads, *x, Mat::filled(r, c, g.item()));
            }
            Op::MeanAll(x) => {
                let (r, c) = self.shape(*x);
                let n = (r * c).max(1) as f64;
                accumulate(grads, *x, Mat::filled(r, c, g.item() / n));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.len().max(1) as f64;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d.row_mut(r)[t] -= 1.0;
                }
                d.scale_assign(g.item() / n);
                accumulate(grads, *logits, d);
            }
        }
    }

    fn attention_backward(&self, s: &AttentionSaved, g: &Mat, grads: &mut [Option<Mat>]) {
        let (qv, kv, vv) = (self.value(s.q), self.value(s.k), self.value(s.v));
        let width = qv.cols();
        let dh = width / s.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(qv.rows(), width);
        let mut dk = Mat::zeros(kv.rows(), width);
        let mut dv = Mat::zeros(vv.rows(), width);
        let mut dp = Vec::new();
        let mut block = 0;
        for seg in 0..s.q_seg.len() {
            let qr = s.q_seg.range(seg);
            let kr = s.kv_seg.range(seg);
            let lk = kr.len();
            for h in 0..s.heads {
                let c0 = h * dh;
                let base = s.offsets[block];
                block += 1;
                for (ii, i) in qr.clone().enumerate() {
                    let p = &s.probs[base + ii * lk..base + (ii + 1) * lk];
                    let grow = &g.row(i)[c0..c0 + dh];
                    // dP = dO · V^T ; dV += P^T · dO
                    dp.clear();
                    for (jj, j) in kr.clone().enumerate() {
                        let vrow = &vv.row(j)[c0..c0 + dh];
                        dp.push(grow.iter().zip(vrow).map(|(a, b)| a * b).sum::<f64>());
                        let dvrow = &mut dv.row_mut(j)[c0..c0 + dh];
                        for (d, gg) in dvrow.iter_mut().zip(grow) {
                            *d += p[jj] * gg;
                        }
                    }
                    let dot: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum();
                    let qrow = &qv.row(i)[c0..c0 + dh];
                    for (jj, j) in kr.clone().enumerate() {
                        let ds = p[jj] * (dp[jj] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = &kv.row(j)[c0..c0 + dh];
                        let dqrow = &mut dq.row_mut(i)[c0..c0 + dh];
                        for (d, kk) in dqrow.iter_mut().zip(krow) {
                            *d += ds * kk;
                        }
                        let dkrow = &mut dk.row_mut(j)[c0..c0 + dh];
                        for (d, qq) in dkrow.iter_mut().zip(qrow) {
                            *d += ds * qq;
                        }
                    }
                }
            }
        }
        accumulate(grads, s.q, dq);
        accumulate(grads, s.k, dk);
        accumulate(grads, s.v, dv);
    }
}

fn segment_reduce(x: &Mat, seg: &Segments, mean: bool) -> Mat {
    assert_eq!(seg.total_rows(), x.rows(), "segments do not cover rows");
    let mut out = Mat::zeros(seg.len(), x.cols());
    for s in 0..seg.len() {
        let range = seg.range(s);
        let w = if mean { 1.0 / range.len().max(1) as f64 } else { 1.0 };
        let o = out.row_mut(s);
        for r in range {
            for (acc, v) in o.iter_mut().zip(x.row(r)) {
                *acc += v * w;
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference of `f` with respect to every entry of the
    /// constant inputs, compared with the tape gradient.
    fn check_inputs(inputs: &[Mat], f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|m| g.constant(m.clone())).collect();
        let loss = f(&mut g, &vars);
        let grads = g.backward(loss);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.node(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(m.rows(), m.cols()));
            for i in 0..m.len() {
                let eval = |delta: f64| {
                    let mut perturbed = inputs.to_vec();
                    perturbed[k].data_mut()[i] += delta;
                    let mut g = Graph::new(&store);
                    let vars: Vec<Var> = perturbed.into_iter().map(|m| g.constant(m)).collect();
                    let l = f(&mut g, &vars);
                    g.value(l).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic.data()[i];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!((an - fd).abs() / denom < 1e-5, "input {k} entry {i}: analytic {an} vs finite difference {fd}");
            }
        }
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        Mat::randn(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn matmul_bias_silu_gradients() {
        let inputs = [rand_mat(3, 4, 1), rand_mat(4, 2, 2), rand_mat(1, 2, 3)];
        check_inputs(&inputs, |g, v| {
            let y = g.matmul(v[0], v[1]);
            let y = g.add_bias(y, v[2]);
            let y = g.silu(y);
            let y = g.square(y);
            g.sum(y)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let inputs = [rand_mat(3, 5, 4), rand_mat(1, 5, 5), rand_mat(1, 5, 6), rand_mat(3, 5, 7)];
        check_inputs(&inputs, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]);
            let y = g.mul(y, v[3]);
            g.sum(y)
        });
    }

    #[test]
    fn attention_gradients() {
        let q_seg = Rc::new(Segments::from_lengths(&[2, 3]));
        let kv_seg = Rc::new(Segments::from_lengths(&[3, 1]));
        let inputs = [rand_mat(5, 4, 8), rand_mat(4, 4, 9), rand_mat(4, 4, 10), rand_mat(5, 4, 11)];
        check_inputs(&inputs, |g, v| {
            let y = g.attention(v[0], v[1], v[2], 2, q_seg.clone(), kv_seg.clone());
            let y = g.mul(y, v[3]);
            g.sum(y)
        });
    }

    #[test]
    fn gather_segment_and_slice_gradients() {
        let seg = Rc::new(Segments::from_lengths(&[2, 2]));
        let idx = Rc::new(vec![0, 2, 2, 1]);
        let inputs = [rand_mat(3, 3, 12), rand_mat(4, 3, 13)];
        check_inputs(&inputs, |g, v| {
            let a = g.gather_rows(v[0], idx.clone());
            let b = g.add(a, v[1]);
            let c = g.segment_mean(b, seg.clone());
            let d = g.segment_sum(b, seg.clone());
            let e = g.concat_rows(&[c, d]);
            let f = g.slice_rows(e, 1, 2);
            let f = g.exp(f);
            let h = g.row_sum(f);
            let h = g.softplus(h);
            g.mean(h)
        });
    }

    #[test]
    fn cross_entropy_and_elementwise_gradients() {
        let targets = Rc::new(vec![2, 0, 1]);
        let inputs = [rand_mat(3, 3, 14), rand_mat(3, 3, 15)];
        check_inputs(&inputs, |g, v| {
            let ce = g.cross_entropy(v[0], targets.clone());
            let s = g.sub(v[0], v[1]);
            let s = g.scale(s, 0.3);
            let s = g.add_scalar(s, 0.1);
            let m = g.minimum(s, v[1]);
            let c = g.clamp(m, -5.0, 5.0);
            let t = g.mean(c);
            g.add(ce, t)
        });
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Mat::from_vec(1, 3, vec![-2.0, 0.5, 2.0]));
        let c = g.clamp(x, -1.0, 1.0);
        let s = g.sum(c);
        let grads = g.backward(s);
        assert_eq!(grads.node(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Mat::from_vec(1, 1, vec![3.0]));
        let mut g = Graph::new(&store);
        let a = g.param(w);
        let b = g.param(w);
        assert_eq!(a, b);
        let y = g.mul(a, b);
        let y = g.sum(y);
        let grads = g.backward(y);
        assert_eq!(grads.param(w).unwrap().item(), 6.0);
    }
}
