//! A small reverse-mode automatic differentiation engine over dense
//! row-major `f64` matrices, with the fused operations the planner needs
//! (layer norm, grouped graph attention, masked MSE).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
        }
        Mat::from_vec(rows.len(), cols, data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, o: &Mat) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, o: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), o.shape());
        Mat::from_vec(
            self.rows,
            self.cols,
            self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * b`.
    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, b.cols);
        let n = b.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &b.data[k * n..(k + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `self^T * b`.
    pub fn matmul_tn(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "matmul_tn shape mismatch");
        let mut out = Mat::zeros(self.cols, b.cols);
        let n = b.cols;
        for r in 0..self.rows {
            let brow = b.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `self * b^T`.
    pub fn matmul_nt(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "matmul_nt shape mismatch");
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a, b.row(j));
            }
        }
        out
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of a parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight matrix.
    pub fn add_weight(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }
}

/// Handle of a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Node, Node),
    Add(Node, Node),
    AddRow(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    Scale(Node, f64),
    Relu(Node),
    LayerNorm {
        x: Node,
        gamma: Node,
        beta: Node,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Node>),
    Gather(Node, Arc<Vec<usize>>),
    SetRows {
        base: Node,
        rows: Arc<Vec<usize>>,
        src: Node,
    },
    Attention {
        q: Node,
        k: Node,
        v: Node,
        dst: Arc<Vec<usize>>,
        heads: usize,
        probs: Vec<f64>,
    },
    Dropout(Node, Vec<f64>),
    MaskedMse {
        pred: Node,
        target: Mat,
        weights: Vec<f64>,
        denom: f64,
    },
}

enum Value {
    Owned(Mat),
    Param(ParamId),
}

/// Computation tape. Nodes are appended in evaluation order, so reverse
/// creation order is a valid backward order.
pub struct Graph<'p> {
    params: &'p ParamStore,
    values: Vec<Value>,
    ops: Vec<Op>,
}

/// Gradients of parameters from one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    pub params: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().map(Mat::sum_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.params.iter_mut().flatten() {
            for v in &mut g.data {
                *v *= s;
            }
        }
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(m) => m.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops every node created after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.values.truncate(len);
        self.ops.truncate(len);
    }

    pub fn value(&self, n: Node) -> &Mat {
        match &self.values[n.0] {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn push(&mut self, m: Mat, op: Op) -> Node {
        self.values.push(Value::Owned(m));
        self.ops.push(op);
        Node(self.values.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Node {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Node {
        self.values.push(Value::Param(id));
        self.ops.push(Op::Param(id));
        Node(self.values.len() - 1)
    }

    pub fn matmul(&mut self, a: Node, b: Node) -> Node {
        let m = self.value(a).matmul(self.value(b));
        self.push(m, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let m = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(m, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Node, row: Node) -> Node {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows, 1);
        assert_eq!(av.cols, rv.cols);
        let mut m = av.clone();
        for i in 0..m.rows {
            for (o, r) in m.row_mut(i).iter_mut().zip(&rv.data) {
                *o += r;
            }
        }
        self.push(m, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        let m = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(m, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let m = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(m, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Node, s: f64) -> Node {
        let m = self.value(a).scaled(s);
        self.push(m, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Node) -> Node {
        let m = self.value(a).map(|v| v.max(0.0));
        self.push(m, Op::Relu(a))
    }

    /// Row-wise layer normalization with affine `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Node, gamma: Node, beta: Node) -> Node {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let c = xv.cols;
        let mut xhat = Mat::zeros(xv.rows, c);
        let mut out = Mat::zeros(xv.rows, c);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for i in 0..xv.rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / c as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + 1e-5).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (r[j] - mean) * is;
                xhat.data[i * c + j] = h;
                out.data[i * c + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Node]) -> Node {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let v = self.value(*p);
                assert_eq!(v.rows, rows, "concat_cols row mismatch");
                m.data[i * cols + off..i * cols + off + v.cols].copy_from_slice(v.row(i));
                off += v.cols;
            }
        }
        self.push(m, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather(&mut self, a: Node, idx: Arc<Vec<usize>>) -> Node {
        let av = self.value(a);
        let mut m = Mat::zeros(idx.len(), av.cols);
        for (k, &i) in idx.iter().enumerate() {
            m.row_mut(k).copy_from_slice(av.row(i));
        }
        self.push(m, Op::Gather(a, idx))
    }

    /// Copy of `base` with row `rows[k]` replaced by row `k` of `src`.
    pub fn set_rows(&mut self, base: Node, rows: Arc<Vec<usize>>, src: Node) -> Node {
        let mut m = self.value(base).clone();
        let sv = self.value(src);
        assert_eq!(sv.rows, rows.len());
        for (k, &r) in rows.iter().enumerate() {
            m.row_mut(r).copy_from_slice(sv.row(k));
        }
        self.push(m, Op::SetRows { base, rows, src })
    }

    /// Multi-head attention over an edge list. Edge `e` carries key and value
    /// rows `k[e]`, `v[e]` toward query row `dst[e]`. Softmax is taken per
    /// query and head over its incoming edges; queries without edges get 0.
    pub fn attention(&mut self, q: Node, k: Node, v: Node, dst: Arc<Vec<usize>>, heads: usize) -> Node {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols;
        assert!(d % heads == 0, "model width must divide into heads");
        assert_eq!(kv.rows, dst.len());
        assert_eq!(vv.rows, dst.len());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ne = dst.len();
        let mut probs = vec![0.0; ne * heads];
        let mut maxes = vec![f64::NEG_INFINITY; qv.rows * heads];
        for e in 0..ne {
            let (qr, kr) = (qv.row(dst[e]), kv.row(e));
            for h in 0..heads {
                let s = dot(&qr[h * dh..(h + 1) * dh], &kr[h * dh..(h + 1) * dh]) * scale;
                probs[e * heads + h] = s;
                let m = &mut maxes[dst[e] * heads + h];
                if s > *m {
                    *m = s;
                }
            }
        }
        let mut sums = vec![0.0; qv.rows * heads];
        for e in 0..ne {
            for h in 0..heads {
                let p = (probs[e * heads + h] - maxes[dst[e] * heads + h]).exp();
                probs[e * heads + h] = p;
                sums[dst[e] * heads + h] += p;
            }
        }
        let mut out = Mat::zeros(qv.rows, d);
        for e in 0..ne {
            let vr = vv.row(e);
            let orow = &mut out.data[dst[e] * d..(dst[e] + 1) * d];
            for h in 0..heads {
                let p = probs[e * heads + h] / sums[dst[e] * heads + h];
                probs[e * heads + h] = p;
                for j in h * dh..(h + 1) * dh {
                    orow[j] += p * vr[j];
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                dst,
                heads,
                probs,
            },
        )
    }

    /// Inverted dropout with keep-probability `1 - p`.
    pub fn dropout(&mut self, a: Node, p: f64, rng: &mut impl Rng) -> Node {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let av = self.value(a);
        let mask: Vec<f64> = (0..av.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = Mat::from_vec(av.rows, av.cols, av.data.iter().zip(&mask).map(|(x, k)| x * k).collect());
        self.push(m, Op::Dropout(a, mask))
    }

    /// `sum_i w_i * |pred_i - target_i|^2 / denom` as a `1 x 1` node.
    pub fn masked_mse(&mut self, pred: Node, target: Mat, weights: Vec<f64>, denom: f64) -> Node {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        assert_eq!(weights.len(), pv.rows);
        let mut total = 0.0;
        for i in 0..pv.rows {
            if weights[i] != 0.0 {
                let s: f64 = pv.row(i).iter().zip(target.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                total += weights[i] * s;
            }
        }
        self.push(
            Mat::from_vec(1, 1, vec![total / denom]),
            Op::MaskedMse {
                pred,
                target,
                weights,
                denom,
            },
        )
    }

    /// Backpropagates from scalar node `root` (seed 1).
    pub fn backward(&self, root: Node) -> Grads {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        self.backward_with(root, Mat::from_vec(1, 1, vec![1.0])).1
    }

    /// Backpropagates `seed` from `root`; returns input-node gradients (by
    /// node) and parameter gradients.
    pub fn backward_with(&self, root: Node, seed: Mat) -> (Vec<Option<Mat>>, Grads) {
        let mut g: Vec<Option<Mat>> = (0..self.values.len()).map(|_| None).collect();
        g[root.0] = Some(seed);
        let mut grads = Grads {
            params: vec![None; self.params.len()],
        };
        for n in (0..=root.0).rev() {
            let Some(gn) = g[n].take() else { continue };
            match &self.ops[n] {
                Op::Input => {
                    g[n] = Some(gn);
                }
                Op::Param(id) => accumulate(&mut grads.params[id.0], gn),
                Op::MatMul(a, b) => {
                    let ga = gn.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&gn);
                    accumulate(&mut g[a.0], ga);
                    accumulate(&mut g[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[b.0], gn.clone());
                    accumulate(&mut g[a.0], gn);
                }
                Op::AddRow(a, r) => {
                    let mut gr = Mat::zeros(1, gn.cols);
                    for i in 0..gn.rows {
                        for (o, v) in gr.data.iter_mut().zip(gn.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut g[r.0], gr);
                    accumulate(&mut g[a.0], gn);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut g[b.0], gn.scaled(-1.0));
                    accumulate(&mut g[a.0], gn);
                }
                Op::Mul(a, b) => {
                    let ga = gn.zip(self.value(*b), |x, y| x * y);
                    let gb = gn.zip(self.value(*a), |x, y| x * y);
                    accumulate(&mut g[a.0], ga);
                    accumulate(&mut g[b.0], gb);
                }
                Op::Scale(a, s) => accumulate(&mut g[a.0], gn.scaled(*s)),
                Op::Relu(a) => {
                    let ga = gn.zip(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut g[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gm = self.value(*gamma);
                    let c = gn.cols;
                    let mut gg = Mat::zeros(1, c);
                    let mut gb = Mat::zeros(1, c);
                    let mut gx = Mat::zeros(gn.rows, c);
                    for i in 0..gn.rows {
                        let (go, xh) = (gn.row(i), xhat.row(i));
                        let mut dxh = vec![0.0; c];
                        for j in 0..c {
                            gg.data[j] += go[j] * xh[j];
                            gb.data[j] += go[j];
                            dxh[j] = go[j] * gm.data[j];
                        }
                        let mean_d = dxh.iter().sum::<f64>() / c as f64;
                        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let row = gx.row_mut(i);
                        for j in 0..c {
                            row[j] = inv_std[i] * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    accumulate(&mut g[gamma.0], gg);
                    accumulate(&mut g[beta.0], gb);
                    accumulate(&mut g[x.0], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(*p).cols;
                        let mut gp = Mat::zeros(gn.rows, c);
                        for i in 0..gn.rows {
                            gp.row_mut(i).copy_from_slice(&gn.row(i)[off..off + c]);
                        }
                        off += c;
                        accumulate(&mut g[p.0], gp);
                    }
                }
                Op::Gather(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = Mat::zeros(av.rows, av.cols);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(gn.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::SetRows { base, rows, src } => {
                    let mut gs = Mat::zeros(rows.len(), gn.cols);
                    let mut gb = gn;
                    for (k, &r) in rows.iter().enumerate() {
                        gs.row_mut(k).copy_from_slice(gb.row(r));
                        gb.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                    accumulate(&mut g[src.0], gs);
                    accumulate(&mut g[base.0], gb);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    dst,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.cols;
                    let heads = *heads;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let ne = dst.len();
                    let mut gq = Mat::zeros(qv.rows, d);
                    let mut gk = Mat::zeros(ne, d);
                    let mut gv = Mat::zeros(ne, d);
                    let mut dp = vec![0.0; ne * heads];
                    let mut wsum = vec![0.0; qv.rows * heads];
                    for e in 0..ne {
                        let go = gn.row(dst[e]);
                        let vr = vv.row(e);
                        let gvr = gv.row_mut(e);
                        for h in 0..heads {
                            let p = probs[e * heads + h];
                            let mut s = 0.0;
                            for j in h * dh..(h + 1) * dh {
                                gvr[j] = p * go[j];
                                s += go[j] * vr[j];
                            }
                            dp[e * heads + h] = s;
                            wsum[dst[e] * heads + h] += p * s;
                        }
                    }
                    for e in 0..ne {
                        let qr = qv.row(dst[e]);
                        let kr = kv.row(e);
                        for h in 0..heads {
                            let p = probs[e * heads + h];
                            let ds = p * (dp[e * heads + h] - wsum[dst[e] * heads + h]) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let gqr = &mut gq.data[dst[e] * d..(dst[e] + 1) * d];
                            for j in h * dh..(h + 1) * dh {
                                gqr[j] += ds * kr[j];
                            }
                            let gkr = &mut gk.data[e * d..(e + 1) * d];
                            for j in h * dh..(h + 1) * dh {
                                gkr[j] += ds * qr[j];
                            }
                        }
                    }
                    accumulate(&mut g[q.0], gq);
                    accumulate(&mut g[k.0], gk);
                    accumulate(&mut g[v.0], gv);
                }
                Op::Dropout(a, mask) => {
                    let ga = Mat::from_vec(gn.rows, gn.cols, gn.data.iter().zip(mask).map(|(x, m)| x * m).collect());
                    accumulate(&mut g[a.0], ga);
                }
                Op::MaskedMse {
                    pred,
                    target,
                    weights,
                    denom,
                } => {
                    let pv = self.value(*pred);
                    let s = gn.data[0];
                    let mut gp = Mat::zeros(pv.rows, pv.cols);
                    for i in 0..pv.rows {
                        let w = weights[i];
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..pv.cols {
                            gp.data[i * pv.cols + j] = s * 2.0 * w * (pv.get(i, j) - target.get(i, j)) / denom;
                        }
                    }
                    accumulate(&mut g[pred.0], gp);
                }
            }
        }
        (g, grads)
    }
}

/// AdamW with decoupled weight decay on matrices (rank-2 weights with more
/// than one row); biases and norms are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, _, m)| Mat::zeros(m.rows, m.cols)).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.params.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.get_mut(ParamId(i));
            let decay = if p.rows > 1 { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * g.data[j];
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * g.data[j] * g.data[j];
                let mh = m.data[j] / b1t;
                let vh = v.data[j] / b2t;
                p.data[j] -= lr * (mh / (vh.sqrt() + self.eps) + decay * p.data[j]);
            }
        }
    }
}

/// One-cycle learning-rate schedule with cosine warm-up and annealing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        let warm = ((self.pct_start * self.total_steps as f64) - 1.0).max(1.0);
        let last = (self.total_steps as f64 - 1.0).max(warm + 1.0);
        let s = step as f64;
        let cos = |from: f64, to: f64, pct: f64| to + (from - to) * (1.0 + (std::f64::consts::PI * pct.clamp(0.0, 1.0)).cos()) / 2.0;
        if s <= warm {
            cos(initial, self.max_lr, s / warm)
        } else {
            cos(self.max_lr, min, (s - warm) / (last - warm))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks d(sum(out .* w))/d(param) against central differences for a
    /// graph built by `f` from the parameter store.
    fn check(store: &mut ParamStore, f: &dyn Fn(&mut Graph) -> Node) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (weights, grads) = {
            let mut g = Graph::new(store);
            let out = f(&mut g);
            let ov = g.value(out).clone();
            let w = rand_mat(&mut rng, ov.rows, ov.cols);
            let (_, grads) = g.backward_with(out, w.clone());
            (w, grads)
        };
        let objective = |s: &ParamStore| -> f64 {
            let mut g = Graph::new(s);
            let out = f(&mut g);
            g.value(out).data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for p in 0..store.len() {
            let id = ParamId(p);
            for j in 0..store.get(id).len() {
                let orig = store.get(id).data[j];
                store.get_mut(id).data[j] = orig + h;
                let up = objective(store);
                store.get_mut(id).data[j] = orig - h;
                let down = objective(store);
                store.get_mut(id).data[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.get(id).map_or(0.0, |g| g.data[j]);
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {} [{j}]: fd {fd} vs analytic {an}",
                    store.name(id)
                );
            }
        }
    }

    fn store_with(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ParamStore::new();
        for (n, r, c) in shapes {
            s.add(*n, rand_mat(&mut rng, *r, *c));
        }
        s
    }

    #[test]
    fn matmul_add_relu() {
        let mut s = store_with(&[("a", 3, 4), ("b", 4, 2), ("c", 3, 2), ("r", 1, 2)]);
        check(&mut s, &|g| {
            let (a, b, c, r) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)), g.param(ParamId(3)));
            let m = g.matmul(a, b);
            let x = g.add(m, c);
            let y = g.add_row(x, r);
            let z = g.relu(y);
            let w = g.mul(z, c);
            let d = g.sub(w, y);
            g.scale(d, 1.5)
        });
    }

    #[test]
    fn layer_norm_grad() {
        let mut s = store_with(&[("x", 4, 5), ("g", 1, 5), ("b", 1, 5)]);
        check(&mut s, &|g| {
            let (x, gm, b) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)));
            g.layer_norm(x, gm, b)
        });
    }

    #[test]
    fn concat_gather_setrows() {
        let mut s = store_with(&[("a", 3, 2), ("b", 3, 3), ("c", 5, 4)]);
        check(&mut s, &|g| {
            let (a, b, c) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)));
            let ab = g.concat_cols(&[a, b]);
            let gth = g.gather(ab, Arc::new(vec![2, 0, 2, 1]));
            let base = g.matmul(gth, c);
            let src = g.gather(ab, Arc::new(vec![1]));
            let src = g.matmul(src, c);
            let two = g.gather(src, Arc::new(vec![0, 0]));
            g.set_rows(base, Arc::new(vec![1, 3]), two)
        });
    }

    #[test]
    fn attention_grad() {
        let mut s = store_with(&[("q", 3, 4), ("k", 6, 4), ("v", 6, 4)]);
        let dst = Arc::new(vec![0, 0, 1, 1, 1, 0]);
        check(&mut s, &|g| {
            let (q, k, v) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)));
            g.attention(q, k, v, dst.clone(), 2)
        });
    }

    #[test]
    fn attention_without_edges_is_zero() {
        let s = store_with(&[("q", 2, 4), ("k", 1, 4), ("v", 1, 4)]);
        let mut g = Graph::new(&s);
        let (q, k, v) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)));
        let out = g.attention(q, k, v, Arc::new(vec![0]), 2);
        assert!(g.value(out).row(1).iter().all(|x| *x == 0.0));
        // single edge: output is the value row
        assert_eq!(g.value(out).row(0), s.get(ParamId(2)).row(0));
    }

    #[test]
    fn masked_mse_grad() {
        let mut s = store_with(&[("p", 3, 2)]);
        check(&mut s, &|g| {
            let p = g.param(ParamId(0));
            let t = Mat::from_vec(3, 2, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.0]);
            g.masked_mse(p, t, vec![1.0, 0.0, 2.0], 4.0)
        });
    }

    #[test]
    fn dropout_scales_kept_units() {
        let s = store_with(&[("p", 50, 20)]);
        let mut g = Graph::new(&s);
        let p = g.param(ParamId(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = g.dropout(p, 0.5, &mut rng);
        let (pv, dv) = (s.get(ParamId(0)), g.value(d));
        let kept = dv.data.iter().filter(|v| **v != 0.0).count();
        assert!(kept > 400 && kept < 600);
        for (a, b) in pv.data.iter().zip(&dv.data) {
            assert!(*b == 0.0 || (b - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn one_cycle_shape() {
        let s = OneCycle::new(5e-4, 100);
        assert!((s.lr(0) - 5e-4 / 25.0).abs() < 1e-15);
        let peak = (0..100).map(|i| s.lr(i)).fold(0.0, f64::max);
        assert!((peak - 5e-4).abs() < 1e-12);
        assert!(s.lr(99) < 1e-7);
    }

    #[test]
    fn adamw_moves_against_gradient() {
        let mut s = ParamStore::new();
        let id = s.add("w", Mat::from_vec(2, 1, vec![1.0, -1.0]));
        let mut opt = AdamW::new(&s, 0.0);
        let grads = Grads {
            params: vec![Some(Mat::from_vec(2, 1, vec![1.0, -1.0]))],
        };
        opt.update(&mut s, &grads, 0.1);
        assert!((s.get(id).data[0] - 0.9).abs() < 1e-6);
        assert!((s.get(id).data[1] + 0.9).abs() < 1e-6);
    }
}
