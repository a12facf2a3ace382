//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward computation. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every bound parameter. The op set is small and tailored to
//! the recurrent graph models in this crate; LSTM cells, edge message
//! aggregation and diagonal-Gaussian densities are fused ops with analytic
//! backward passes.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::linalg::{gemm, Mat};
use crate::params::{Grads, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Directed edge list for [`Tape::edge_aggregate`].
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
}

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    SumAll(Var),
    SumRowsSorted(Var, Vec<usize>),
    LstmCell {
        gates: Var,
        c_prev: Var,
    },
    EdgeAggregate {
        send: Var,
        recv: Var,
        w2: Var,
        b2: Var,
        edges: Rc<EdgeList>,
        pre: Mat,
        post: Mat,
    },
    GaussLogLik {
        mu: Var,
        log_sigma: Var,
        target: Var,
    },
    GaussKl {
        mu_q: Var,
        ls_q: Var,
        mu_p: Var,
        ls_p: Var,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    accessed: RefCell<BTreeSet<ParamId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            bound: vec![None; params.len()],
            accessed: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters read by this tape so far, in id order.
    pub fn accessed_params(&self) -> Vec<ParamId> {
        self.accessed.borrow().iter().copied().collect()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Const => false,
            Op::Param(_) => true,
            other => parents(other).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        self.accessed.borrow_mut().insert(id);
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.bound[id.0] = Some(v);
        v
    }

    /// Copies the value of `v` into a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let value = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(value, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::hcat(&mats);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::vcat(&mats);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).cols_slice(start, len);
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let value = self.value(a).select_rows(&idx);
        self.push(value, Op::SelectRows(a, idx))
    }

    /// `1 x cols` sum of the listed rows of `a`. Each column's values are
    /// added in ascending order, so the result is bit-identical under any
    /// reordering of `rows`.
    pub fn sum_rows_sorted(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(1, av.cols());
        let mut col = Vec::with_capacity(rows.len());
        for c in 0..av.cols() {
            col.clear();
            col.extend(rows.iter().map(|&r| av.get(r, c)));
            col.sort_by(f64::total_cmp);
            out.set(0, c, col.iter().sum());
        }
        self.push(out, Op::SumRowsSorted(a, rows))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// LSTM pointwise cell. `gates` holds pre-activations ordered
    /// `[input, forget, cell, output]`; returns `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Var {
        let (g, cp) = (self.value(gates), self.value(c_prev));
        let hdim = cp.cols();
        assert_eq!(g.cols(), 4 * hdim, "lstm gate width mismatch");
        assert_eq!(g.rows(), cp.rows(), "lstm row mismatch");
        let mut value = Mat::zeros(g.rows(), 2 * hdim);
        for r in 0..g.rows() {
            let gr = g.row(r);
            let cr = cp.row(r);
            let out = value.row_mut(r);
            for k in 0..hdim {
                let i = sigmoid(gr[k]);
                let f = sigmoid(gr[hdim + k]);
                let gg = gr[2 * hdim + k].tanh();
                let o = sigmoid(gr[3 * hdim + k]);
                let c = f * cr[k] + i * gg;
                out[k] = o * c.tanh();
                out[hdim + k] = c;
            }
        }
        self.push(value, Op::LstmCell { gates, c_prev })
    }

    /// Sum over incoming edges of `relu(relu(send[i] + recv[j]) W2 + b2)`.
    ///
    /// `send` and `recv` are per-node projections of the first edge layer,
    /// so the first layer is evaluated once per node instead of per edge.
    /// Output has one row per node; nodes without in-edges get zeros.
    pub fn edge_aggregate(
        &mut self,
        send: Var,
        recv: Var,
        w2: Var,
        b2: Var,
        edges: Rc<EdgeList>,
    ) -> Var {
        let (sv, rv, w2v, b2v) = (
            self.value(send),
            self.value(recv),
            self.value(w2),
            self.value(b2),
        );
        let hidden = sv.cols();
        assert_eq!(rv.cols(), hidden, "edge projection width mismatch");
        assert_eq!(sv.rows(), rv.rows(), "edge projection row mismatch");
        let n_edges = edges.senders.len();
        let mut pre = Mat::zeros(n_edges, hidden);
        for e in 0..n_edges {
            let (s, r) = (sv.row(edges.senders[e]), rv.row(edges.receivers[e]));
            for ((o, a), b) in pre.row_mut(e).iter_mut().zip(s).zip(r) {
                *o = (a + b).max(0.0);
            }
        }
        let mut post = Mat::zeros(n_edges, w2v.cols());
        for e in 0..n_edges {
            post.row_mut(e).copy_from_slice(b2v.data());
        }
        gemm(&pre, false, w2v, false, &mut post, 1.0);
        for x in post.data_mut() {
            *x = x.max(0.0);
        }
        let mut value = Mat::zeros(sv.rows(), w2v.cols());
        for e in 0..n_edges {
            let j = edges.receivers[e];
            for (o, c) in value.row_mut(j).iter_mut().zip(post.row(e)) {
                *o += c;
            }
        }
        self.push(
            value,
            Op::EdgeAggregate {
                send,
                recv,
                w2,
                b2,
                edges,
                pre,
                post,
            },
        )
    }

    /// Summed diagonal-Gaussian log density of `target` under
    /// `N(mu, exp(log_sigma)^2)`.
    pub fn gauss_log_lik(&mut self, mu: Var, log_sigma: Var, target: Var) -> Var {
        let (m, ls, t) = (self.value(mu), self.value(log_sigma), self.value(target));
        assert_eq!(m.shape(), ls.shape());
        assert_eq!(m.shape(), t.shape());
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let total: f64 = m
            .data()
            .iter()
            .zip(ls.data())
            .zip(t.data())
            .map(|((&m, &ls), &t)| {
                let z = (t - m) * (-ls).exp();
                -half_log_2pi - ls - 0.5 * z * z
            })
            .sum();
        self.push(
            Mat::scalar(total),
            Op::GaussLogLik {
                mu,
                log_sigma,
                target,
            },
        )
    }

    /// Summed closed-form `KL(N(mu_q, s_q^2) || N(mu_p, s_p^2))` over all
    /// entries, parameterised by log standard deviations.
    pub fn gauss_kl(&mut self, mu_q: Var, ls_q: Var, mu_p: Var, ls_p: Var) -> Var {
        let total = gauss_kl_value(
            self.value(mu_q),
            self.value(ls_q),
            self.value(mu_p),
            self.value(ls_p),
        );
        self.push(
            Mat::scalar(total),
            Op::GaussKl {
                mu_q,
                ls_q,
                mu_p,
                ls_p,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out: Vec<Mat> = self
            .params
            .ids()
            .map(|id| {
                let m = self.params.get(id);
                Mat::zeros(m.rows(), m.cols())
            })
            .collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Grads::from_values(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>], out: &mut [Mat]) {
        match &node.op {
            Op::Const => {}
            Op::Param(id) => out[id.0].add_assign(g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let acc = slot(grads, *a, av.shape());
                    gemm(g, false, bv, true, acc, 1.0);
                }
                if self.needs(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    gemm(av, true, g, false, acc, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                if self.needs(*b) {
                    self.accumulate(grads, *b, &g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g);
                if self.needs(*row) {
                    let mut d = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *row, &d);
                }
            }
            Op::MulConst(a, c) => {
                let d = g.zip_map(c, |x, y| x * y);
                self.accumulate(grads, *a, &d);
            }
            Op::Scale(a, s) => {
                let d = g.map(|x| x * s);
                self.accumulate(grads, *a, &d);
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                self.accumulate(grads, *a, &d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |x, s| x * s * (1.0 - s));
                self.accumulate(grads, *a, &d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |x, t| x * (1.0 - t * t));
                self.accumulate(grads, *a, &d);
            }
            Op::Exp(a) => {
                let d = g.zip_map(&node.value, |x, e| x * e);
                self.accumulate(grads, *a, &d);
            }
            Op::Clamp(a, lo, hi) => {
                let d = g.zip_map(self.value(*a), |x, v| {
                    if v >= *lo && v <= *hi {
                        x
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, &d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let d = g.cols_slice(off, w);
                        self.accumulate(grads, *p, &d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    if self.needs(*p) {
                        let d = Mat::from_vec(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec());
                        self.accumulate(grads, *p, &d);
                    }
                    off += rows;
                }
            }
            Op::SumRowsSorted(a, rows) => {
                if self.needs(*a) {
                    let acc = slot(grads, *a, self.value(*a).shape());
                    for &r in rows {
                        for (o, x) in acc.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let acc = slot(grads, *a, av.shape());
                let w = g.cols();
                for r in 0..g.rows() {
                    for (o, x) in acc.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::SelectRows(a, idx) => {
                let av = self.value(*a);
                let acc = slot(grads, *a, av.shape());
                for (o, &i) in idx.iter().enumerate() {
                    for (x, y) in acc.row_mut(i).iter_mut().zip(g.row(o)) {
                        *x += y;
                    }
                }
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                let d = Mat::filled(av.rows(), av.cols(), g.item());
                self.accumulate(grads, *a, &d);
            }
            Op::LstmCell { gates, c_prev } => {
                self.backprop_lstm(node, g, *gates, *c_prev, grads);
            }
            Op::EdgeAggregate {
                send,
                recv,
                w2,
                b2,
                edges,
                pre,
                post,
            } => {
                let n_edges = edges.senders.len();
                let out_w = post.cols();
                // d(post-activation) gathered from receivers, masked by relu.
                let mut dz = Mat::zeros(n_edges, out_w);
                for e in 0..n_edges {
                    let j = edges.receivers[e];
                    for ((o, &gv), &c) in dz.row_mut(e).iter_mut().zip(g.row(j)).zip(post.row(e)) {
                        *o = if c > 0.0 { gv } else { 0.0 };
                    }
                }
                if self.needs(*w2) {
                    let acc = slot(grads, *w2, self.value(*w2).shape());
                    gemm(pre, true, &dz, false, acc, 1.0);
                }
                if self.needs(*b2) {
                    let acc = slot(grads, *b2, self.value(*b2).shape());
                    for e in 0..n_edges {
                        for (o, x) in acc.data_mut().iter_mut().zip(dz.row(e)) {
                            *o += x;
                        }
                    }
                }
                if self.needs(*send) || self.needs(*recv) {
                    let hidden = pre.cols();
                    let mut dpre = Mat::zeros(n_edges, hidden);
                    gemm(&dz, false, self.value(*w2), true, &mut dpre, 0.0);
                    for (d, &a) in dpre.data_mut().iter_mut().zip(pre.data()) {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    if self.needs(*send) {
                        let acc = slot(grads, *send, self.value(*send).shape());
                        for e in 0..n_edges {
                            let i = edges.senders[e];
                            for (o, x) in acc.row_mut(i).iter_mut().zip(dpre.row(e)) {
                                *o += x;
                            }
                        }
                    }
                    if self.needs(*recv) {
                        let acc = slot(grads, *recv, self.value(*recv).shape());
                        for e in 0..n_edges {
                            let j = edges.receivers[e];
                            for (o, x) in acc.row_mut(j).iter_mut().zip(dpre.row(e)) {
                                *o += x;
                            }
                        }
                    }
                }
            }
            Op::GaussLogLik {
                mu,
                log_sigma,
                target,
            } => {
                let gs = g.item();
                let (m, ls, t) = (self.value(*mu), self.value(*log_sigma), self.value(*target));
                let mut dmu = Mat::zeros(m.rows(), m.cols());
                let mut dls = Mat::zeros(m.rows(), m.cols());
                for k in 0..m.data().len() {
                    let inv_var = (-2.0 * ls.data()[k]).exp();
                    let r = t.data()[k] - m.data()[k];
                    dmu.data_mut()[k] = gs * r * inv_var;
                    dls.data_mut()[k] = gs * (-1.0 + r * r * inv_var);
                }
                if self.needs(*target) {
                    let dt = dmu.map(|x| -x);
                    self.accumulate(grads, *target, &dt);
                }
                self.accumulate(grads, *mu, &dmu);
                self.accumulate(grads, *log_sigma, &dls);
            }
            Op::GaussKl {
                mu_q,
                ls_q,
                mu_p,
                ls_p,
            } => {
                let gs = g.item();
                let (mq, lq, mp, lp) = (
                    self.value(*mu_q),
                    self.value(*ls_q),
                    self.value(*mu_p),
                    self.value(*ls_p),
                );
                let shape = mq.shape();
                let mut d_mq = Mat::zeros(shape.0, shape.1);
                let mut d_lq = Mat::zeros(shape.0, shape.1);
                let mut d_mp = Mat::zeros(shape.0, shape.1);
                let mut d_lp = Mat::zeros(shape.0, shape.1);
                for k in 0..mq.data().len() {
                    let inv_vp = (-2.0 * lp.data()[k]).exp();
                    let vq = (2.0 * lq.data()[k]).exp();
                    let diff = mq.data()[k] - mp.data()[k];
                    d_mq.data_mut()[k] = gs * diff * inv_vp;
                    d_mp.data_mut()[k] = -gs * diff * inv_vp;
                    d_lq.data_mut()[k] = gs * (-1.0 + vq * inv_vp);
                    d_lp.data_mut()[k] = gs * (1.0 - (vq + diff * diff) * inv_vp);
                }
                self.accumulate(grads, *mu_q, &d_mq);
                self.accumulate(grads, *ls_q, &d_lq);
                self.accumulate(grads, *mu_p, &d_mp);
                self.accumulate(grads, *ls_p, &d_lp);
            }
        }
    }

    fn backprop_lstm(&self, node: &Node, g: &Mat, gates: Var, c_prev: Var, grads: &mut [Option<Mat>]) {
        let (gv, cp) = (self.value(gates), self.value(c_prev));
        let hdim = cp.cols();
        let mut dgates = Mat::zeros(gv.rows(), 4 * hdim);
        let mut dcp = Mat::zeros(cp.rows(), hdim);
        for r in 0..gv.rows() {
            let gr = gv.row(r);
            let cr = cp.row(r);
            let outr = node.value.row(r);
            let gradr = g.row(r);
            let dg = dgates.row_mut(r);
            for k in 0..hdim {
                let i = sigmoid(gr[k]);
                let f = sigmoid(gr[hdim + k]);
                let gg = gr[2 * hdim + k].tanh();
                let o = sigmoid(gr[3 * hdim + k]);
                let c = outr[hdim + k];
                let tc = c.tanh();
                let dh = gradr[k];
                let dc = gradr[hdim + k] + dh * o * (1.0 - tc * tc);
                dg[k] = dc * gg * i * (1.0 - i);
                dg[hdim + k] = dc * cr[k] * f * (1.0 - f);
                dg[2 * hdim + k] = dc * i * (1.0 - gg * gg);
                dg[3 * hdim + k] = dh * tc * o * (1.0 - o);
                dcp.row_mut(r)[k] = dc * f;
            }
        }
        self.accumulate(grads, gates, &dgates);
        self.accumulate(grads, c_prev, &dcp);
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, d: &Mat) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(d),
            slot @ None => *slot = Some(d.clone()),
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Mat>], v: Var, shape: (usize, usize)) -> &'a mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Const | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
            vec![*a, *b]
        }
        Op::MulConst(a, _)
        | Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Clamp(a, _, _)
        | Op::SliceCols(a, _)
        | Op::SelectRows(a, _)
        | Op::SumRowsSorted(a, _)
        | Op::SumAll(a) => vec![*a],
        Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        Op::LstmCell { gates, c_prev } => vec![*gates, *c_prev],
        Op::EdgeAggregate {
            send, recv, w2, b2, ..
        } => vec![*send, *recv, *w2, *b2],
        Op::GaussLogLik {
            mu,
            log_sigma,
            target,
        } => vec![*mu, *log_sigma, *target],
        Op::GaussKl {
            mu_q,
            ls_q,
            mu_p,
            ls_p,
        } => vec![*mu_q, *ls_q, *mu_p, *ls_p],
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Closed-form diagonal Gaussian KL summed over entries.
pub fn gauss_kl_value(mu_q: &Mat, ls_q: &Mat, mu_p: &Mat, ls_p: &Mat) -> f64 {
    mu_q.data()
        .iter()
        .zip(ls_q.data())
        .zip(mu_p.data().iter().zip(ls_p.data()))
        .map(|((&mq, &lq), (&mp, &lp))| {
            let vq = (2.0 * lq).exp();
            let vp = (2.0 * lp).exp();
            lp - lq + (vq + (mq - mp) * (mq - mp)) / (2.0 * vp) - 0.5
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` with respect to every parameter.
    fn numeric_grads(store: &ParamStore, f: &dyn Fn(&ParamStore) -> f64) -> Vec<Mat> {
        let eps = 1e-6;
        let mut out = Vec::new();
        for id in store.ids() {
            let mut g = Mat::zeros(store.get(id).rows(), store.get(id).cols());
            for k in 0..g.data().len() {
                let mut plus = store.clone();
                plus.get_mut(id).data_mut()[k] += eps;
                let mut minus = store.clone();
                minus.get_mut(id).data_mut()[k] -= eps;
                g.data_mut()[k] = (f(&plus) - f(&minus)) / (2.0 * eps);
            }
            out.push(g);
        }
        out
    }

    fn check(store: &ParamStore, build: &dyn Fn(&mut Tape) -> Var) {
        let tape_loss = |s: &ParamStore| {
            let mut t = Tape::new(s);
            let l = build(&mut t);
            t.value(l).item()
        };
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        let analytic = tape.backward(loss);
        let numeric = numeric_grads(store, &tape_loss);
        for (id, num) in store.ids().zip(&numeric) {
            let an = analytic.get(id);
            let err = an.max_abs_diff(num);
            let scale = num.norm().max(an.norm()).max(1e-8);
            assert!(
                err / scale < 1e-6,
                "param {} mismatch: {:?} vs {:?}",
                store.name(id),
                an,
                num
            );
        }
    }

    fn random_store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(n, r, c) in shapes {
            s.add_uniform(n, r, c, 2, &mut rng);
        }
        s
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let s = random_store(&[("a", 3, 4), ("b", 4, 2), ("r", 1, 2)], 1);
        check(&s, &|t| {
            let a = t.param(ParamId(0));
            let b = t.param(ParamId(1));
            let r = t.param(ParamId(2));
            let ab = t.matmul(a, b);
            let x = t.add_row(ab, r);
            let s1 = t.sigmoid(x);
            let t1 = t.tanh(x);
            let e = t.exp(t1);
            let m = t.mul(s1, e);
            let rl = t.relu(m);
            let c = t.clamp(x, -0.3, 0.3);
            let sum = t.add(rl, c);
            let d = t.sub(sum, t1);
            let sc = t.scale(d, 1.7);
            let cat = t.concat_cols(&[sc, x]);
            let sl = t.slice_cols(cat, 1, 2);
            let sel0 = t.select_rows(sl, vec![2, 0, 2]);
            let stacked = t.concat_rows(&[sel0, sl]);
            let sel = t.select_rows(stacked, vec![0, 4, 2]);
            let mc = t.mul_const(sel, Mat::filled(3, 2, 0.5));
            t.sum_all(mc)
        });
    }

    #[test]
    fn lstm_cell_gradient() {
        let s = random_store(&[("g", 3, 8), ("c", 3, 2)], 2);
        check(&s, &|t| {
            let g = t.param(ParamId(0));
            let c = t.param(ParamId(1));
            let out = t.lstm_cell(g, c);
            let w = t.constant(Mat::from_vec(4, 1, vec![0.3, -0.7, 1.1, 0.2]));
            let y = t.matmul(out, w);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn edge_aggregate_gradient() {
        let s = random_store(&[("s", 3, 4), ("r", 3, 4), ("w2", 4, 3), ("b2", 1, 3)], 3);
        let edges = Rc::new(EdgeList {
            senders: vec![0, 1, 2, 0, 2],
            receivers: vec![1, 0, 0, 2, 1],
        });
        check(&s, &|t| {
            let ids: Vec<Var> = (0..4).map(|i| t.param(ParamId(i))).collect();
            let agg = t.edge_aggregate(ids[0], ids[1], ids[2], ids[3], edges.clone());
            let sq = t.mul(agg, agg);
            t.sum_all(sq)
        });
    }

    #[test]
    fn gaussian_density_and_kl_gradients() {
        let s = random_store(
            &[("mq", 2, 3), ("lq", 2, 3), ("mp", 2, 3), ("lp", 2, 3), ("t", 2, 3)],
            4,
        );
        check(&s, &|t| {
            let v: Vec<Var> = (0..5).map(|i| t.param(ParamId(i))).collect();
            let ll = t.gauss_log_lik(v[0], v[1], v[4]);
            let kl = t.gauss_kl(v[0], v[1], v[2], v[3]);
            t.sub(ll, kl)
        });
    }

    #[test]
    fn sorted_row_sum_gradient_and_order_independence() {
        let s = random_store(&[("a", 4, 3)], 6);
        check(&s, &|t| {
            let a = t.param(ParamId(0));
            let sum = t.sum_rows_sorted(a, vec![3, 0, 2]);
            let sq = t.mul(sum, sum);
            t.sum_all(sq)
        });
        let vals = Mat::from_vec(3, 1, vec![1e16, 1.0, -1e16]);
        let mut t = Tape::new(&s);
        let a = t.constant(vals);
        let x = t.sum_rows_sorted(a, vec![0, 1, 2]);
        let y = t.sum_rows_sorted(a, vec![2, 0, 1]);
        assert_eq!(t.value(x), t.value(y));
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let m = Mat::from_vec(1, 3, vec![0.1, -2.0, 3.0]);
        let l = Mat::from_vec(1, 3, vec![-1.0, 0.0, 0.5]);
        assert!(gauss_kl_value(&m, &l, &m, &l).abs() < 1e-15);
    }

    #[test]
    fn parameters_are_bound_once_and_tracked() {
        let s = random_store(&[("a", 1, 1), ("b", 1, 1)], 5);
        let mut t = Tape::new(&s);
        let a1 = t.param(ParamId(0));
        let a2 = t.param(ParamId(0));
        assert_eq!(a1, a2);
        assert_eq!(t.accessed_params(), vec![ParamId(0)]);
    }
}
