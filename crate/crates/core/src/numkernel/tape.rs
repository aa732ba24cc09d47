//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node whose inputs already exist, so node order is a
//! topological order and the backward sweep is a single reverse scan.

use super::array::NdArray;
use super::conv::{self, ConvGeometry};
use super::param::{ParamId, Parameter};
use crate::error::{Error, Result};

/// Epsilon added to the variance in normalization layers.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    Dot(NodeId, NdArray),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        geom: ConvGeometry,
    },
    /// Normalization with statistics taken from the input batch.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Normalization with fixed statistics.
    ChannelAffine {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GlobalAvgPool(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    GatherRows {
        table: NodeId,
        rows: Vec<usize>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick {
        x: NodeId,
        cols: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: NdArray,
    },
}

#[derive(Debug)]
struct Node {
    value: NdArray,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(NodeId, ParamId)>,
}

/// Gradients indexed by node, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<NdArray>>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&NdArray> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::shape(op, format!("{a:?} vs {b:?}"))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a 2-D array with max subtraction.
pub fn softmax_rows(x: &NdArray) -> NdArray {
    let (n, k) = (x.dim(0), x.dim(1));
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = x.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * k..(r + 1) * k];
        let mut z = 0.0;
        for (d, v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    NdArray::from_vec(&[n, k], out)
}

fn log_softmax_rows(x: &NdArray) -> NdArray {
    let (n, k) = (x.dim(0), x.dim(1));
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = x.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (d, v) in out[r * k..(r + 1) * k].iter_mut().zip(row) {
            *d = v - lse;
        }
    }
    NdArray::from_vec(&[n, k], out)
}

fn require_2d(op: &'static str, a: &NdArray) -> Result<(usize, usize)> {
    if a.ndim() != 2 {
        return Err(Error::shape(op, format!("expected 2-D input, got {:?}", a.shape())));
    }
    Ok((a.dim(0), a.dim(1)))
}

fn channel_layout(op: &'static str, x: &NdArray, gamma: &NdArray, beta: &NdArray) -> Result<(usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(Error::shape(op, format!("input must be [N,C,H,W], got {:?}", x.shape())));
    }
    let c = x.dim(1);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            op,
            format!("dimension 1: {c} channels but affine params {:?}/{:?}", gamma.shape(), beta.shape()),
        ));
    }
    Ok((x.dim(0), c, x.dim(2) * x.dim(3)))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &NdArray {
        &self.nodes[node.0].value
    }

    pub fn requires_grad(&self, node: NodeId) -> bool {
        self.nodes[node.0].requires_grad
    }

    /// Parameter leaves recorded with [`Tape::param`].
    pub fn param_nodes(&self) -> impl Iterator<Item = (NodeId, ParamId)> + '_ {
        self.params.iter().copied()
    }

    fn push(&mut self, value: NdArray, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: NdArray) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: NdArray) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; its gradient is routed back by
    /// [`crate::numkernel::ParamStore::accumulate`]. Frozen parameters still
    /// get gradients here, the optimizer is what leaves them alone.
    pub fn param(&mut self, key: ParamId, p: &Parameter) -> NodeId {
        let id = self.push(p.value.clone(), Op::Leaf, true);
        self.params.push((id, key));
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let v = NdArray::from_vec(va.shape(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = NdArray::from_vec(va.shape(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = NdArray::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    /// Scalar `sum(a * weights)` with constant weights.
    pub fn dot(&mut self, a: NodeId, weights: NdArray) -> Result<NodeId> {
        let va = self.value(a);
        if va.len() != weights.len() {
            return Err(mismatch("dot", va.shape(), weights.shape()));
        }
        let s = va.data().iter().zip(weights.data()).map(|(x, w)| x * w).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(NdArray::scalar(s), Op::Dot(a, weights), rg))
    }

    /// `x * w^T + b` for `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, din) = require_2d("linear", vx)?;
        let (dout, wdin) = require_2d("linear", vw)?;
        if din != wdin {
            return Err(Error::shape(
                "linear",
                format!("input features {din} != weight input features {wdin}"),
            ));
        }
        let mut out = vec![0.0; n * dout];
        conv::gemm(n, din, dout, vx.data(), false, vw.data(), true, &mut out, false);
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.shape() != [dout] {
                return Err(Error::shape("linear", format!("bias {:?} != [{dout}]", vb.shape())));
            }
            for row in out.chunks_mut(dout) {
                for (o, bb) in row.iter_mut().zip(vb.data()) {
                    *o += bb;
                }
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(NdArray::from_vec(&[n, dout], out), Op::Linear { x, w, b }, rg))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let geom = ConvGeometry::infer(self.value(x).shape(), self.value(w).shape(), stride, padding)?;
        let v = conv::conv2d_forward(self.value(x).data(), self.value(w).data(), &geom);
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::Conv2d { x, w, geom }, rg))
    }

    /// Training-mode normalization; returns the output and the batch statistics
    /// (biased variance) so the caller can update running estimates.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(NodeId, BatchStats)> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, c, plane) = channel_layout("batch_norm", vx, vg, vb)?;
        let m = (n * plane) as f64;
        let xd = vx.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                s += xd[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
            }
            let mu = s / m;
            let mut sq = 0.0;
            for b in 0..n {
                sq += xd[(b * c + ch) * plane..][..plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            mean[ch] = mu;
            var[ch] = sq / m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let out = affine_channels(xd, vg.data(), vb.data(), &mean, &inv_std, n, c, plane);
        let rg = self.rg(&[x, gamma, beta]);
        let id = self.push(
            NdArray::from_vec(vx.shape(), out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                inv_std,
            },
            rg,
        );
        Ok((id, BatchStats { mean, var }))
    }

    /// Evaluation-mode normalization with fixed `mean`/`var`.
    pub fn channel_affine(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, mean: &[f64], var: &[f64]) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, c, plane) = channel_layout("channel_affine", vx, vg, vb)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("channel_affine", format!("statistics length != {c} channels")));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let out = affine_channels(vx.data(), vg.data(), vb.data(), mean, &inv_std, n, c, plane);
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            NdArray::from_vec(vx.shape(), out),
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            rg,
        ))
    }

    /// `[N,C,H,W]` -> `[N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.ndim() != 4 {
            return Err(Error::shape("global_avg_pool", format!("input must be [N,C,H,W], got {:?}", vx.shape())));
        }
        let (n, c, plane) = (vx.dim(0), vx.dim(1), vx.dim(2) * vx.dim(3));
        let out = vx.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(NdArray::from_vec(&[n, c], out), Op::GlobalAvgPool(x), rg))
    }

    /// Columns `start..start+len` of a 2-D node.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let vx = self.value(x);
        let (n, k) = require_2d("slice_cols", vx)?;
        if len == 0 || start + len > k {
            return Err(Error::shape("slice_cols", format!("columns {start}..{} of {k}", start + len)));
        }
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(NdArray::from_vec(&[n, len], out), Op::SliceCols { x, start }, rg))
    }

    /// Embedding lookup: row `rows[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (t, e) = require_2d("gather_rows", vt)?;
        if rows.is_empty() {
            return Err(Error::shape("gather_rows", "no rows requested"));
        }
        let mut out = Vec::with_capacity(rows.len() * e);
        for &r in rows {
            if r >= t {
                return Err(Error::shape("gather_rows", format!("row {r} out of range for table of {t}")));
            }
            out.extend_from_slice(vt.row(r));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            NdArray::from_vec(&[rows.len(), e], out),
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        require_2d("softmax", self.value(x))?;
        let v = softmax_rows(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Softmax(x), rg))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        require_2d("log_softmax", self.value(x))?;
        let v = log_softmax_rows(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::LogSoftmax(x), rg))
    }

    /// `out[n] = x[n, cols[n]]`.
    pub fn pick(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId> {
        let vx = self.value(x);
        let (n, k) = require_2d("pick", vx)?;
        if cols.len() != n {
            return Err(Error::shape("pick", format!("{} indices for {n} rows", cols.len())));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= k) {
            return Err(Error::shape("pick", format!("column {c} out of range for {k}")));
        }
        let out = cols.iter().enumerate().map(|(r, &c)| vx.row(r)[c]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            NdArray::from_vec(&[n], out),
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let vl = self.value(logits);
        let (n, k) = require_2d("cross_entropy", vl)?;
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }
        let logp = log_softmax_rows(vl);
        let loss = -labels.iter().enumerate().map(|(r, &l)| logp.row(r)[l]).sum::<f64>() / n as f64;
        let probs = logp.map(f64::exp);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            NdArray::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `loss` node.
    ///
    /// Panics if an op references a node recorded after itself, which can only
    /// come from a construction bug.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<NdArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(NdArray::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, node: &Node, g: &NdArray, grads: &mut [Option<NdArray>]) {
        let send = |id: NodeId, grad: NdArray, grads: &mut [Option<NdArray>]| {
            assert!(id.0 < i, "tape cycle: node {i} depends on later node {}", id.0);
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(*b), |x, y| x * y);
                let gb = zip_map(g, val(*a), |x, y| x * y);
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::Scale(a, s) => send(*a, g.map(|x| x * s), grads),
            Op::Relu(a) => send(*a, zip_map(g, &node.value, |x, y| if y > 0.0 { x } else { 0.0 }), grads),
            Op::Sigmoid(a) => send(*a, zip_map(g, &node.value, |x, y| x * y * (1.0 - y)), grads),
            Op::Tanh(a) => send(*a, zip_map(g, &node.value, |x, y| x * (1.0 - y * y)), grads),
            Op::Sum(a) => send(*a, NdArray::full(val(*a).shape(), g.item()), grads),
            Op::Dot(a, w) => {
                let s = g.item();
                let data = w.data().iter().map(|v| v * s).collect();
                send(*a, NdArray::from_vec(val(*a).shape(), data), grads);
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (n, din) = (vx.dim(0), vx.dim(1));
                let dout = vw.dim(0);
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![0.0; n * din];
                    conv::gemm(n, dout, din, g.data(), false, vw.data(), false, &mut gx, false);
                    send(*x, NdArray::from_vec(&[n, din], gx), grads);
                }
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![0.0; dout * din];
                    conv::gemm(dout, n, din, g.data(), true, vx.data(), false, &mut gw, false);
                    send(*w, NdArray::from_vec(&[dout, din], gw), grads);
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; dout];
                    for row in g.data().chunks(dout) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(*b, NdArray::from_vec(&[dout], gb), grads);
                }
            }
            Op::Conv2d { x, w, geom } => {
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let (gx, gw) = conv::conv2d_backward(val(*x).data(), val(*w).data(), g.data(), geom, need_x, need_w);
                if let Some(gx) = gx {
                    send(*x, NdArray::from_vec(val(*x).shape(), gx), grads);
                }
                if let Some(gw) = gw {
                    send(*w, NdArray::from_vec(val(*w).shape(), gw), grads);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let vx = val(*x);
                let (n, c, plane) = (vx.dim(0), vx.dim(1), vx.dim(2) * vx.dim(3));
                let m = (n * plane) as f64;
                let gam = val(*gamma).data();
                let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
                let mut gx = vec![0.0; vx.len()];
                for ch in 0..c {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        for p in 0..plane {
                            let xh = (vx.data()[off + p] - mean[ch]) * inv_std[ch];
                            sg += g.data()[off + p];
                            sgx += g.data()[off + p] * xh;
                        }
                    }
                    dg[ch] = sgx;
                    db[ch] = sg;
                    let k = gam[ch] * inv_std[ch] / m;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        for p in 0..plane {
                            let xh = (vx.data()[off + p] - mean[ch]) * inv_std[ch];
                            gx[off + p] = k * (m * g.data()[off + p] - sg - xh * sgx);
                        }
                    }
                }
                send(*x, NdArray::from_vec(vx.shape(), gx), grads);
                send(*gamma, NdArray::from_vec(&[c], dg), grads);
                send(*beta, NdArray::from_vec(&[c], db), grads);
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let vx = val(*x);
                let (n, c, plane) = (vx.dim(0), vx.dim(1), vx.dim(2) * vx.dim(3));
                let gam = val(*gamma).data();
                let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
                let mut gx = vec![0.0; vx.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for p in 0..plane {
                            let gv = g.data()[off + p];
                            dg[ch] += gv * (vx.data()[off + p] - mean[ch]) * inv_std[ch];
                            db[ch] += gv;
                            gx[off + p] = gv * gam[ch] * inv_std[ch];
                        }
                    }
                }
                send(*x, NdArray::from_vec(vx.shape(), gx), grads);
                send(*gamma, NdArray::from_vec(&[c], dg), grads);
                send(*beta, NdArray::from_vec(&[c], db), grads);
            }
            Op::GlobalAvgPool(x) => {
                let vx = val(*x);
                let plane = vx.dim(2) * vx.dim(3);
                let mut gx = Vec::with_capacity(vx.len());
                for v in g.data() {
                    gx.extend(std::iter::repeat_n(v / plane as f64, plane));
                }
                send(*x, NdArray::from_vec(vx.shape(), gx), grads);
            }
            Op::SliceCols { x, start } => {
                let vx = val(*x);
                let (n, k) = (vx.dim(0), vx.dim(1));
                let len = g.dim(1);
                let mut gx = vec![0.0; n * k];
                for r in 0..n {
                    gx[r * k + start..r * k + start + len].copy_from_slice(g.row(r));
                }
                send(*x, NdArray::from_vec(&[n, k], gx), grads);
            }
            Op::GatherRows { table, rows } => {
                let vt = val(*table);
                let e = vt.dim(1);
                let mut gt = vec![0.0; vt.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (acc, v) in gt[r * e..(r + 1) * e].iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                send(*table, NdArray::from_vec(vt.shape(), gt), grads);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let k = y.dim(1);
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.dim(0) {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        gx[r * k + j] = yr[j] * (gr[j] - dotp);
                    }
                }
                send(*x, NdArray::from_vec(y.shape(), gx), grads);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let k = y.dim(1);
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.dim(0) {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let sg: f64 = gr.iter().sum();
                    for j in 0..k {
                        gx[r * k + j] = gr[j] - yr[j].exp() * sg;
                    }
                }
                send(*x, NdArray::from_vec(y.shape(), gx), grads);
            }
            Op::Pick { x, cols } => {
                let vx = val(*x);
                let k = vx.dim(1);
                let mut gx = vec![0.0; vx.len()];
                for (r, &c) in cols.iter().enumerate() {
                    gx[r * k + c] = g.data()[r];
                }
                send(*x, NdArray::from_vec(vx.shape(), gx), grads);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.dim(1);
                let s = g.item() / n as f64;
                let mut gx: Vec<f64> = probs.data().iter().map(|p| p * s).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * k + l] -= s;
                }
                send(*logits, NdArray::from_vec(probs.shape(), gx), grads);
            }
        }
    }
}

fn zip_map(a: &NdArray, b: &NdArray, f: impl Fn(f64, f64) -> f64) -> NdArray {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    NdArray::from_vec(a.shape(), data)
}

#[allow(clippy::too_many_arguments)]
fn affine_channels(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    n: usize,
    c: usize,
    plane: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (s, m, bb) = (gamma[ch] * inv_std[ch], mean[ch], beta[ch]);
            for p in 0..plane {
                out[off + p] = (x[off + p] - m) * s + bb;
            }
        }
    }
    out
}
