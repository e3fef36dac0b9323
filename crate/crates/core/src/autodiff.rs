//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node whose
//! parents already exist, so insertion order is a topological order and the
//! graph is acyclic by construction. `backward` walks the tape in reverse
//! from a scalar root.
//!
//! Loss-style operations reduce over rows (the batch axis) with an explicit
//! [`Reduction`], which lets a single graph produce exact per-sample
//! gradients (`Reduction::Sum`) for counterfactual generation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{usage, Error, Result};
use crate::tensor::{log_softmax, softmax, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Stabilizer inside `−log(1 − p + δ)`.
pub const COMPLEMENT_DELTA: f64 = 1e-12;

/// Handle to a node in a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Operation identity of a node.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Relu(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        reduction: Reduction,
        probs: Vec<f64>,
    },
    /// `−log(1 − softmax(logits)[label] + δ)` per row.
    NegLogComplement {
        logits: usize,
        labels: Vec<usize>,
        reduction: Reduction,
        probs: Vec<f64>,
    },
    /// `KL(softmax(a) ‖ softmax(b))` per row.
    KlSoftmax {
        a: usize,
        b: usize,
        reduction: Reduction,
        p: Vec<f64>,
        log_ratio: Vec<f64>,
        q: Vec<f64>,
        kl: Vec<f64>,
    },
    /// 1-D Wasserstein distance between the value distributions of two rows.
    Wasserstein1d {
        a: usize,
        b: usize,
        reduction: Reduction,
        order_a: Vec<usize>,
        order_b: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation graph (tape).
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    backward_runs: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_runs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, n: NodeId) -> Result<usize> {
        if n.graph != self.id || n.index >= self.nodes.len() {
            return usage("node does not belong to this graph");
        }
        Ok(n.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A differentiable input (parameter or probed intermediate).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// An input excluded from differentiation; its gradient stays zero.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, n: NodeId) -> &Tensor {
        &self.nodes[self.idx(n).expect("foreign node")].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, n: NodeId) -> f64 {
        self.value(n).data()[0]
    }

    pub fn op(&self, n: NodeId) -> &Op {
        &self.nodes[self.idx(n).expect("foreign node")].op
    }

    pub fn grad(&self, n: NodeId) -> &Tensor {
        &self.nodes[self.idx(n).expect("foreign node")].grad
    }

    /// Accumulated gradient of the last backward root with respect to `n`.
    pub fn grad_wrt(&self, n: NodeId) -> Result<Tensor> {
        let i = self.idx(n)?;
        if self.backward_runs == 0 {
            return usage("grad_wrt called before backward");
        }
        Ok(self.nodes[i].grad.clone())
    }

    fn rg(&self, parents: &[usize]) -> bool {
        parents.iter().any(|&p| self.nodes[p].requires_grad)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let value = {
            let (xv, wv, bv) = (
                &self.nodes[xi].value,
                &self.nodes[wi].value,
                &self.nodes[bi].value,
            );
            if bv.rows() != 1 {
                return Err(Error::Config("linear: bias must be a row vector".into()));
            }
            xv.affine(wv, bv)?
        };
        let rg = self.rg(&[xi, wi, bi]);
        Ok(self.push(value, Op::Linear { x: xi, w: wi, b: bi }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[xi]);
        Ok(self.push(value, Op::Relu(xi), rg))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(Error::Config(format!(
                "{name}: shapes {:?} and {:?} differ",
                self.nodes[ai].value.shape(),
                self.nodes[bi].value.shape()
            )));
        }
        Ok((ai, bi))
    }

    fn zip_values(&self, ai: usize, bi: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let a = &self.nodes[ai].value;
        let b = &self.nodes[bi].value;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary(a, b, "add")?;
        let v = self.zip_values(ai, bi, |x, y| x + y);
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(v, Op::Add(ai, bi), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary(a, b, "sub")?;
        let v = self.zip_values(ai, bi, |x, y| x - y);
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(v, Op::Sub(ai, bi), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary(a, b, "mul")?;
        let v = self.zip_values(ai, bi, |x, y| x * y);
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(v, Op::Mul(ai, bi), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let ai = self.idx(a)?;
        let v = self.nodes[ai].value.scaled(s);
        let rg = self.rg(&[ai]);
        Ok(self.push(v, Op::Scale(ai, s), rg))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.idx(a)?;
        let s = self.nodes[ai].value.data().iter().sum();
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::row_vector(&[s]), Op::Sum(ai), rg))
    }

    /// Mean of all entries, as a `1×1` node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.idx(a)?;
        let v = &self.nodes[ai].value;
        if v.is_empty() {
            return Err(Error::Config("mean of an empty tensor".into()));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::row_vector(&[s]), Op::Mean(ai), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let idx = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let v = {
            let refs: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
            Tensor::concat_cols(&refs)?
        };
        let rg = self.rg(&idx);
        Ok(self.push(v, Op::ConcatCols(idx), rg))
    }

    fn check_labels(&self, li: usize, labels: &[usize]) -> Result<()> {
        let lv = &self.nodes[li].value;
        if labels.len() != lv.rows() {
            return Err(Error::Config(format!(
                "{} labels for {} rows of logits",
                labels.len(),
                lv.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lv.cols()) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {} classes",
                lv.cols()
            )));
        }
        Ok(())
    }

    fn reduce(values: &[f64], reduction: Reduction) -> f64 {
        let s: f64 = values.iter().sum();
        match reduction {
            Reduction::Sum => s,
            Reduction::Mean => s / values.len().max(1) as f64,
        }
    }

    /// `−log softmax(logits)[label]`, reduced over rows.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let li = self.idx(logits)?;
        self.check_labels(li, labels)?;
        let lv = &self.nodes[li].value;
        let mut probs = Vec::with_capacity(lv.len());
        let mut losses = Vec::with_capacity(lv.rows());
        for (row, &y) in lv.iter_rows().zip(labels) {
            let ls = log_softmax(row);
            losses.push(-ls[y]);
            probs.extend(ls.iter().map(|v| v.exp()));
        }
        let v = Self::reduce(&losses, reduction);
        let rg = self.rg(&[li]);
        Ok(self.push(
            Tensor::row_vector(&[v]),
            Op::SoftmaxCrossEntropy {
                logits: li,
                labels: labels.to_vec(),
                reduction,
                probs,
            },
            rg,
        ))
    }

    /// `−log(1 − softmax(logits)[label] + δ)`, reduced over rows.
    pub fn neg_log_complement(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let li = self.idx(logits)?;
        self.check_labels(li, labels)?;
        let lv = &self.nodes[li].value;
        let mut probs = Vec::with_capacity(lv.len());
        let mut losses = Vec::with_capacity(lv.rows());
        for (row, &y) in lv.iter_rows().zip(labels) {
            let p = softmax(row);
            losses.push(-(1.0 - p[y] + COMPLEMENT_DELTA).ln());
            probs.extend(p);
        }
        let v = Self::reduce(&losses, reduction);
        let rg = self.rg(&[li]);
        Ok(self.push(
            Tensor::row_vector(&[v]),
            Op::NegLogComplement {
                logits: li,
                labels: labels.to_vec(),
                reduction,
                probs,
            },
            rg,
        ))
    }

    /// Row-wise `KL(softmax(a) ‖ softmax(b))`, reduced over rows.
    pub fn kl_softmax(&mut self, a: NodeId, b: NodeId, reduction: Reduction) -> Result<NodeId> {
        let (ai, bi) = self.binary(a, b, "kl_softmax")?;
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.cols() == 0 {
            return Err(Error::Config("kl_softmax: zero-dimensional rows".into()));
        }
        let n = av.len();
        let (mut p, mut log_ratio, mut q) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        let mut kl = Vec::with_capacity(av.rows());
        for (ra, rb) in av.iter_rows().zip(bv.iter_rows()) {
            let la = log_softmax(ra);
            let lb = log_softmax(rb);
            let mut k = 0.0;
            for (x, y) in la.iter().zip(&lb) {
                let pi = x.exp();
                k += pi * (x - y);
                p.push(pi);
                log_ratio.push(x - y);
                q.push(y.exp());
            }
            // exact zero when the distributions coincide; rounding can leave -1e-17
            kl.push(k.max(0.0));
        }
        let v = Self::reduce(&kl, reduction);
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(
            Tensor::row_vector(&[v]),
            Op::KlSoftmax {
                a: ai,
                b: bi,
                reduction,
                p,
                log_ratio,
                q,
                kl,
            },
            rg,
        ))
    }

    /// Row-wise 1-D Wasserstein distance between the empirical distributions
    /// of the entries of `a` and `b`, reduced over rows.
    pub fn wasserstein_1d(&mut self, a: NodeId, b: NodeId, reduction: Reduction) -> Result<NodeId> {
        let (ai, bi) = self.binary(a, b, "wasserstein_1d")?;
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let d = av.cols();
        let mut order_a = Vec::with_capacity(av.len());
        let mut order_b = Vec::with_capacity(av.len());
        let mut w = Vec::with_capacity(av.rows());
        for (ra, rb) in av.iter_rows().zip(bv.iter_rows()) {
            let oa = sorted_order(ra);
            let ob = sorted_order(rb);
            let s: f64 = oa.iter().zip(&ob).map(|(&i, &j)| (ra[i] - rb[j]).abs()).sum();
            w.push(s / d as f64);
            order_a.extend(oa);
            order_b.extend(ob);
        }
        let v = Self::reduce(&w, reduction);
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(
            Tensor::row_vector(&[v]),
            Op::Wasserstein1d {
                a: ai,
                b: bi,
                reduction,
                order_a,
                order_b,
            },
            rg,
        ))
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        self.backward_runs = 0;
    }

    /// Back-propagates from a scalar root, accumulating into every
    /// ancestor's gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let ri = self.idx(root)?;
        if self.nodes[ri].value.len() != 1 {
            return usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[ri].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; ri + 1];
        grads[ri] = Some(vec![1.0]);
        for i in (0..=ri).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let acc = self.nodes[i].grad.data_mut();
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        self.backward_runs += 1;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut send = |p: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[p].requires_grad {
                return;
            }
            let slot = grads[p].get_or_insert_with(|| vec![0.0; nodes[p].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
                let (rows, n_in, n_out) = (xv.rows(), xv.cols(), wv.rows());
                send(*x, &mut |dx| {
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj != 0.0 {
                                for (d, &wv) in dxr.iter_mut().zip(wv.row(j)) {
                                    *d += gj * wv;
                                }
                            }
                        }
                    }
                });
                send(*w, &mut |dw| {
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for j in 0..n_out {
                            let gj = g[r * n_out + j];
                            if gj != 0.0 {
                                for (d, &xk) in dw[j * n_in..(j + 1) * n_in].iter_mut().zip(xr) {
                                    *d += gj * xk;
                                }
                            }
                        }
                    }
                });
                send(*b, &mut |db| {
                    for r in 0..rows {
                        for (d, &gj) in db.iter_mut().zip(&g[r * n_out..(r + 1) * n_out]) {
                            *d += gj;
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = nodes[*x].value.data();
                send(*x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                send(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                send(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                send(*a, &mut |d| {
                    for ((d, gv), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                send(*b, &mut |d| {
                    for ((d, gv), x) in d.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, s) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v * s));
            }
            Op::Sum(a) => {
                send(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(a) => {
                let n = nodes[*a].value.len() as f64;
                send(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::ConcatCols(parts) => {
                let rows = nodes[i].value.rows();
                let total = nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p].value.cols();
                    send(p, &mut |d| {
                        for r in 0..rows {
                            for k in 0..c {
                                d[r * c + k] += g[r * total + offset + k];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                reduction,
                probs,
            } => {
                let k = nodes[*logits].value.cols();
                let scale = row_scale(g[0], *reduction, labels.len());
                send(*logits, &mut |d| {
                    for (r, &y) in labels.iter().enumerate() {
                        for c in 0..k {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            d[r * k + c] += scale * (probs[r * k + c] - onehot);
                        }
                    }
                });
            }
            Op::NegLogComplement {
                logits,
                labels,
                reduction,
                probs,
            } => {
                let k = nodes[*logits].value.cols();
                let scale = row_scale(g[0], *reduction, labels.len());
                send(*logits, &mut |d| {
                    for (r, &y) in labels.iter().enumerate() {
                        let p = &probs[r * k..(r + 1) * k];
                        let py = p[y];
                        let denom = 1.0 - py + COMPLEMENT_DELTA;
                        for c in 0..k {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            d[r * k + c] += scale * py * (onehot - p[c]) / denom;
                        }
                    }
                });
            }
            Op::KlSoftmax {
                a,
                b,
                reduction,
                p,
                log_ratio,
                q,
                kl,
            } => {
                let d = nodes[*a].value.cols();
                let scale = row_scale(g[0], *reduction, kl.len());
                send(*a, &mut |da| {
                    for (r, &k) in kl.iter().enumerate() {
                        for c in 0..d {
                            let j = r * d + c;
                            da[j] += scale * p[j] * (log_ratio[j] - k);
                        }
                    }
                });
                send(*b, &mut |db| {
                    for (j, v) in db.iter_mut().enumerate() {
                        *v += scale * (q[j] - p[j]);
                    }
                });
            }
            Op::Wasserstein1d {
                a,
                b,
                reduction,
                order_a,
                order_b,
            } => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let d = av.cols();
                let rows = av.rows();
                let scale = row_scale(g[0], *reduction, rows) / d as f64;
                let sign = |r: usize, k: usize| {
                    let (ia, ib) = (order_a[r * d + k], order_b[r * d + k]);
                    let diff = av.get(r, ia) - bv.get(r, ib);
                    (ia, ib, if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 })
                };
                send(*a, &mut |da| {
                    for r in 0..rows {
                        for k in 0..d {
                            let (ia, _, s) = sign(r, k);
                            da[r * d + ia] += scale * s;
                        }
                    }
                });
                send(*b, &mut |db| {
                    for r in 0..rows {
                        for k in 0..d {
                            let (_, ib, s) = sign(r, k);
                            db[r * d + ib] -= scale * s;
                        }
                    }
                });
            }
        }
    }
}

fn row_scale(g: f64, reduction: Reduction, rows: usize) -> f64 {
    match reduction {
        Reduction::Sum => g,
        Reduction::Mean => g / rows.max(1) as f64,
    }
}

/// Indices that sort `v` ascending (ties broken by index).
pub(crate) fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
    idx
}

/// `KL(softmax(a) ‖ softmax(b))` on plain slices.
pub fn kl_softmax_value(a: &[f64], b: &[f64]) -> f64 {
    let la = log_softmax(a);
    let lb = log_softmax(b);
    la.iter()
        .zip(&lb)
        .map(|(x, y)| x.exp() * (x - y))
        .sum::<f64>()
        .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_sum() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[1.0, 0.0]));
        let w = g.leaf(Tensor::identity(2));
        let b = g.leaf(Tensor::zeros(1, 2));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[2.0, 3.0]));
        let w = g.leaf(Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap());
        let b = g.leaf(Tensor::zeros(1, 1));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
    }

    #[test]
    fn linear_shape_mismatch_is_config_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[1.0, 2.0, 3.0]));
        let w = g.leaf(Tensor::identity(2));
        let b = g.leaf(Tensor::zeros(1, 2));
        assert!(matches!(g.linear(x, w, b), Err(Error::Config(_))));
    }

    #[test]
    fn relu_values_and_zero_subgradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[-1.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[0.0]));
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);
        assert_eq!(g.grad(x).data(), &[0.0]);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row_vector(&[0.3; 4]));
        let l = g.softmax_cross_entropy(z, &[2], Reduction::Mean).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);

        let mut g = Graph::new();
        let z = g.leaf(Tensor::row_vector(&[10.0, -10.0]));
        let l = g.softmax_cross_entropy(z, &[0], Reduction::Mean).unwrap();
        // log(1 + e^-20)
        let oracle = (-20f64).exp().ln_1p();
        assert!((g.scalar(l) - oracle).abs() < 1e-15);
        assert!((g.scalar(l) - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row_vector(&[0.0, 0.0]));
        assert!(matches!(
            g.softmax_cross_entropy(z, &[2], Reduction::Mean),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn kl_identities() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row_vector(&[0.5, -1.0, 2.0]));
        let b = g.leaf(Tensor::row_vector(&[0.5, -1.0, 2.0]));
        let k = g.kl_softmax(a, b, Reduction::Mean).unwrap();
        assert_eq!(g.scalar(k), 0.0);

        let mut g = Graph::new();
        let a = g.leaf(Tensor::row_vector(&[1.5, 0.0, 3.0]));
        let b = g.leaf(Tensor::row_vector(&[0.5, -1.0, 2.0]));
        let k = g.kl_softmax(a, b, Reduction::Mean).unwrap();
        assert!(g.scalar(k) < 1e-15);

        // direct summation oracle
        let p = softmax(&[1.0, 0.0]);
        let q = softmax(&[0.0, 1.0]);
        let oracle: f64 = p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row_vector(&[1.0, 0.0]));
        let b = g.leaf(Tensor::row_vector(&[0.0, 1.0]));
        let k = g.kl_softmax(a, b, Reduction::Mean).unwrap();
        assert!((g.scalar(k) - oracle).abs() < 1e-14);
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[3.0]));
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 4.0]);
        assert_eq!(g.grad(s).data(), &[1.0]);
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[4.0, 8.0]);
        assert_eq!(g.grad(s).data(), &[2.0]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn grad_wrt_squared_distance_and_independent_node() {
        let c_hat = [0.5, -1.0, 2.0];
        let c_tilde = [1.0, 1.0, -1.0];
        let mut g = Graph::new();
        let c = g.leaf(Tensor::row_vector(&c_hat));
        let unrelated = g.leaf(Tensor::row_vector(&[7.0]));
        let t = g.constant(Tensor::row_vector(&c_tilde));
        let d = g.sub(c, t).unwrap();
        let sq = g.mul(d, d).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad_wrt(c).unwrap();
        for k in 0..3 {
            assert!((grad.data()[k] - 2.0 * (c_hat[k] - c_tilde[k])).abs() < 1e-15);
        }
        assert_eq!(g.grad_wrt(unrelated).unwrap().data(), &[0.0]);
    }

    #[test]
    fn grad_wrt_foreign_node_is_usage_error() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x = g1.leaf(Tensor::row_vector(&[1.0]));
        let y = g2.leaf(Tensor::row_vector(&[1.0]));
        g2.backward(y).unwrap();
        assert!(matches!(g2.grad_wrt(x), Err(Error::Usage(_))));
    }

    #[test]
    fn wasserstein_translation() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row_vector(&[0.0, 1.0, 5.0]));
        let b = g.leaf(Tensor::row_vector(&[2.5, 6.5, 1.5]));
        let w = g.wasserstein_1d(a, b, Reduction::Mean).unwrap();
        assert!((g.scalar(w) - 1.5).abs() < 1e-15);
    }
}
