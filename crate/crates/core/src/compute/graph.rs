//! Reverse-mode automatic differentiation over a per-example tape.
//!
//! A `Graph` is rebuilt for every example (expressions vary in length), holds
//! node values eagerly from the forward pass, and `backward` replays the tape
//! to accumulate gradients for parameters and inputs. All values are rank-1
//! vectors except parameter leaves, which may be matrices consumed by
//! `matvec` and `row`.

use std::collections::HashMap;

use crate::compute::params::{ParamGrads, ParamId, ParamStore};
use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};

pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum NodeValue {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    L2Norm(Var),
    Softmax(Var, Option<Vec<bool>>),
    LogSoftmax(Var, Option<Vec<bool>>),
    Sigmoid(Var),
    Tanh(Var),
    SumVec(Var),
    Dot(Var, Var),
    Pick(Var, usize),
    Lincomb { coeffs: Var, vecs: Vec<Var> },
    Row(Var, usize),
    MaxVec(Var),
    Prod(Var),
    LnFloor(Var, f64),
}

struct Node {
    value: NodeValue,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
            param_leaves: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: NodeValue::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            NodeValue::Owned(t) => t,
            NodeValue::Param(id) => &self.store.get(*id).value,
        }
    }

    pub fn val(&self, v: Var) -> &[f64] {
        self.tensor(v).data()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let d = self.val(v);
        debug_assert_eq!(d.len(), 1);
        d[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.tensor(v).len()
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn input_vec(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(Tensor::raw(vec![n], data), Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Tensor::scalar(v), Op::Leaf)
    }

    /// Leaf bound to a parameter slot; deduplicated per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: NodeValue::Param(id), op: Op::Leaf });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    // ── ops ─────────────────────────────────────────────────────────────

    /// y = W x, W of shape [m, n], x of length n.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = {
            let wt = self.tensor(w);
            let xv = self.val(x);
            if wt.rank() != 2 {
                return Err(Error::Shape(format!("matvec wants a matrix, got rank {}", wt.rank())));
            }
            if wt.cols() != xv.len() {
                return Err(Error::Shape(format!(
                    "matvec: {}x{} against vector of length {}",
                    wt.rows(),
                    wt.cols(),
                    xv.len()
                )));
            }
            let (rows, cols) = (wt.rows(), wt.cols());
            let wd = wt.data();
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let row = &wd[r * cols..(r + 1) * cols];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(xv.iter()) {
                    acc += a * b;
                }
                out[r] = acc;
            }
            out
        };
        let n = out.len();
        Ok(self.push(Tensor::raw(vec![n], out), Op::MatVec(w, x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out: Vec<f64> = {
            let (x, y) = (self.val(a), self.val(b));
            assert_eq!(x.len(), y.len(), "add: length mismatch");
            x.iter().zip(y).map(|(p, q)| p + q).collect()
        };
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out: Vec<f64> = {
            let (x, y) = (self.val(a), self.val(b));
            assert_eq!(x.len(), y.len(), "sub: length mismatch");
            x.iter().zip(y).map(|(p, q)| p - q).collect()
        };
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out: Vec<f64> = {
            let (x, y) = (self.val(a), self.val(b));
            assert_eq!(x.len(), y.len(), "mul: length mismatch");
            x.iter().zip(y).map(|(p, q)| p * q).collect()
        };
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Mul(a, b))
    }

    /// y = mul_const * x + add_const, element-wise.
    pub fn affine(&mut self, x: Var, mul_const: f64, add_const: f64) -> Var {
        let out: Vec<f64> = self.val(x).iter().map(|v| mul_const * v + add_const).collect();
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Affine(x, mul_const))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.val(p));
        }
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = {
            let v = self.val(x);
            assert!(start + len <= v.len(), "slice out of bounds");
            v[start..start + len].to_vec()
        };
        self.push(Tensor::raw(vec![len], out), Op::Slice(x, start, len))
    }

    /// x / (‖x‖₂ + ε); the zero vector maps to itself.
    pub fn l2norm(&mut self, x: Var) -> Var {
        let out: Vec<f64> = {
            let v = self.val(x);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let s = 1.0 / (n + EPS);
            v.iter().map(|a| a * s).collect()
        };
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::L2Norm(x))
    }

    /// Numerically stable softmax; masked-out entries are exactly zero.
    /// `mask[i] = true` keeps entry i. Errors when nothing is kept.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = softmax_values(self.val(x), mask)?;
        let n = out.len();
        Ok(self.push(
            Tensor::raw(vec![n], out),
            Op::Softmax(x, mask.map(|m| m.to_vec())),
        ))
    }

    /// Stable log-softmax; masked entries are set to 0.0 and must not be read.
    pub fn log_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = {
            let v = self.val(x);
            check_mask(v.len(), mask)?;
            let mx = masked_max(v, mask);
            let mut sum = 0.0;
            for (i, &a) in v.iter().enumerate() {
                if keep(mask, i) {
                    sum += (a - mx).exp();
                }
            }
            let lse = mx + sum.ln();
            v.iter()
                .enumerate()
                .map(|(i, &a)| if keep(mask, i) { a - lse } else { 0.0 })
                .collect::<Vec<f64>>()
        };
        let n = out.len();
        Ok(self.push(
            Tensor::raw(vec![n], out),
            Op::LogSoftmax(x, mask.map(|m| m.to_vec())),
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.val(x).iter().map(|&v| sigmoid(v)).collect();
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.val(x).iter().map(|v| v.tanh()).collect();
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Tanh(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.val(x).iter().sum();
        self.push(Tensor::scalar(s), Op::SumVec(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = {
            let (x, y) = (self.val(a), self.val(b));
            assert_eq!(x.len(), y.len(), "dot: length mismatch");
            x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()
        };
        self.push(Tensor::scalar(s), Op::Dot(a, b))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.val(x)[index];
        self.push(Tensor::scalar(v), Op::Pick(x, index))
    }

    /// y = Σ_i coeffs[i] · vecs[i]; the workhorse behind attention pooling.
    pub fn lincomb(&mut self, coeffs: Var, vecs: &[Var]) -> Var {
        let out = {
            let c = self.val(coeffs);
            assert_eq!(c.len(), vecs.len(), "lincomb: coefficient count mismatch");
            let dim = self.len_of(vecs[0]);
            let mut out = vec![0.0; dim];
            for (i, &v) in vecs.iter().enumerate() {
                let row = self.val(v);
                assert_eq!(row.len(), dim, "lincomb: vector length mismatch");
                let ci = c[i];
                for (o, r) in out.iter_mut().zip(row.iter()) {
                    *o += ci * r;
                }
            }
            out
        };
        let n = out.len();
        self.push(
            Tensor::raw(vec![n], out),
            Op::Lincomb { coeffs, vecs: vecs.to_vec() },
        )
    }

    /// Row r of a matrix leaf; gradient scatters into that row only.
    pub fn row(&mut self, matrix: Var, r: usize) -> Var {
        let out = {
            let m = self.tensor(matrix);
            assert_eq!(m.rank(), 2, "row of a non-matrix");
            assert!(r < m.rows(), "row index out of bounds");
            let cols = m.cols();
            m.data()[r * cols..(r + 1) * cols].to_vec()
        };
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::Row(matrix, r))
    }

    /// Max over a vector; gradient routes to the first argmax.
    pub fn max_vec(&mut self, x: Var) -> Var {
        let m = self
            .val(x)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.push(Tensor::scalar(m), Op::MaxVec(x))
    }

    pub fn prod(&mut self, x: Var) -> Var {
        let p: f64 = self.val(x).iter().product();
        self.push(Tensor::scalar(p), Op::Prod(x))
    }

    /// ln(max(x, floor)) element-wise; zero gradient below the floor.
    pub fn ln_floor(&mut self, x: Var, floor: f64) -> Var {
        let out: Vec<f64> = self.val(x).iter().map(|&v| v.max(floor).ln()).collect();
        let n = out.len();
        self.push(Tensor::raw(vec![n], out), Op::LnFloor(x, floor))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse accumulation from a scalar loss. Gradients for parameter
    /// leaves land in the returned [`ParamGrads`]; input sensitivities stay
    /// readable through [`Gradients::wrt`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.tensor(loss);
        if lv.len() != 1 {
            return Err(Error::Shape("backward from a non-scalar loss".into()));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            if grads[id].is_none() {
                continue;
            }
            // Parents are always earlier on the tape.
            let (earlier, rest) = grads.split_at_mut(id);
            let g = rest[0].as_ref().unwrap().as_slice();
            self.backstep(id, g, earlier);
        }

        let mut params = ParamGrads::empty(self.store);
        for (&pid, &var) in &self.param_leaves {
            if let Some(g) = &grads[var.0] {
                params.add(pid, g.len(), g);
            }
        }
        Ok(Gradients { node: grads, params })
    }

    fn backstep(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Accumulate into a parent's gradient buffer, allocating on first touch.
        macro_rules! into {
            ($v:expr, $len:expr, |$buf:ident| $body:block) => {{
                let slot = grads[$v.0].get_or_insert_with(|| vec![0.0; $len]);
                let $buf = slot.as_mut_slice();
                $body
            }};
        }

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let wt = self.tensor(*w);
                let xv = self.val(*x);
                let (rows, cols) = (wt.rows(), wt.cols());
                let wd = wt.data();
                into!(*w, rows * cols, |buf| {
                    for r in 0..rows {
                        let gr = g[r];
                        let dst = &mut buf[r * cols..(r + 1) * cols];
                        for (d, xj) in dst.iter_mut().zip(xv.iter()) {
                            *d += gr * xj;
                        }
                    }
                });
                into!(*x, cols, |buf| {
                    for r in 0..rows {
                        let gr = g[r];
                        let row = &wd[r * cols..(r + 1) * cols];
                        for (d, wj) in buf.iter_mut().zip(row.iter()) {
                            *d += gr * wj;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                into!(*a, g.len(), |buf| {
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                into!(*b, g.len(), |buf| {
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            Op::Sub(a, b) => {
                into!(*a, g.len(), |buf| {
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                into!(*b, g.len(), |buf| {
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.val(*a).to_vec();
                let bv = self.val(*b).to_vec();
                into!(*a, g.len(), |buf| {
                    for ((d, s), q) in buf.iter_mut().zip(g).zip(bv.iter()) {
                        *d += s * q;
                    }
                });
                into!(*b, g.len(), |buf| {
                    for ((d, s), p) in buf.iter_mut().zip(g).zip(av.iter()) {
                        *d += s * p;
                    }
                });
            }
            Op::Affine(x, m) => {
                into!(*x, g.len(), |buf| {
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d += m * s;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.len_of(p);
                    into!(p, len, |buf| {
                        for (d, s) in buf.iter_mut().zip(&g[off..off + len]) {
                            *d += s;
                        }
                    });
                    off += len;
                }
            }
            Op::Slice(x, start, len) => {
                let total = self.len_of(*x);
                into!(*x, total, |buf| {
                    for (d, s) in buf[*start..*start + *len].iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            Op::L2Norm(x) => {
                let xv = self.val(*x);
                let norm = xv.iter().map(|a| a * a).sum::<f64>().sqrt();
                let s = 1.0 / (norm + EPS);
                let gx: f64 = g.iter().zip(xv.iter()).map(|(a, b)| a * b).sum();
                let coeff = if norm > 0.0 {
                    gx / (norm * (norm + EPS) * (norm + EPS))
                } else {
                    0.0
                };
                into!(*x, xv.len(), |buf| {
                    for i in 0..xv.len() {
                        buf[i] += g[i] * s - coeff * xv[i];
                    }
                });
            }
            Op::Softmax(x, mask) => {
                let y = self.val(Var(id)).to_vec();
                let weighted: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                into!(*x, y.len(), |buf| {
                    for i in 0..y.len() {
                        if keep(mask.as_deref(), i) {
                            buf[i] += y[i] * (g[i] - weighted);
                        }
                    }
                });
            }
            Op::LogSoftmax(x, mask) => {
                let xv = self.val(*x);
                let p = softmax_values(xv, mask.as_deref()).expect("mask validated at forward");
                let gsum: f64 = (0..xv.len())
                    .filter(|&i| keep(mask.as_deref(), i))
                    .map(|i| g[i])
                    .sum();
                into!(*x, xv.len(), |buf| {
                    for i in 0..xv.len() {
                        if keep(mask.as_deref(), i) {
                            buf[i] += g[i] - p[i] * gsum;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.val(Var(id)).to_vec();
                into!(*x, y.len(), |buf| {
                    for i in 0..y.len() {
                        buf[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.val(Var(id)).to_vec();
                into!(*x, y.len(), |buf| {
                    for i in 0..y.len() {
                        buf[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::SumVec(x) => {
                let len = self.len_of(*x);
                into!(*x, len, |buf| {
                    for d in buf.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::Dot(a, b) => {
                let av = self.val(*a).to_vec();
                let bv = self.val(*b).to_vec();
                into!(*a, bv.len(), |buf| {
                    for (d, q) in buf.iter_mut().zip(bv.iter()) {
                        *d += g[0] * q;
                    }
                });
                into!(*b, av.len(), |buf| {
                    for (d, p) in buf.iter_mut().zip(av.iter()) {
                        *d += g[0] * p;
                    }
                });
            }
            Op::Pick(x, index) => {
                let len = self.len_of(*x);
                into!(*x, len, |buf| {
                    buf[*index] += g[0];
                });
            }
            Op::Lincomb { coeffs, vecs } => {
                let c = self.val(*coeffs).to_vec();
                let dim = g.len();
                into!(*coeffs, c.len(), |buf| {
                    for (i, &v) in vecs.iter().enumerate() {
                        let row = self.val(v);
                        let mut acc = 0.0;
                        for (a, b) in g.iter().zip(row.iter()) {
                            acc += a * b;
                        }
                        buf[i] += acc;
                    }
                });
                for (i, &v) in vecs.iter().enumerate() {
                    into!(v, dim, |buf| {
                        for (d, s) in buf.iter_mut().zip(g) {
                            *d += c[i] * s;
                        }
                    });
                }
            }
            Op::Row(matrix, r) => {
                let m = self.tensor(*matrix);
                let (rows, cols) = (m.rows(), m.cols());
                into!(*matrix, rows * cols, |buf| {
                    for (d, s) in buf[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            Op::MaxVec(x) => {
                let xv = self.val(*x);
                let mut best = 0;
                for (i, &v) in xv.iter().enumerate() {
                    if v > xv[best] {
                        best = i;
                    }
                }
                into!(*x, xv.len(), |buf| {
                    buf[best] += g[0];
                });
            }
            Op::Prod(x) => {
                let xv = self.val(*x).to_vec();
                let n = xv.len();
                // Prefix/suffix products handle zero factors exactly.
                let mut prefix = vec![1.0; n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] * xv[i];
                }
                let mut suffix = vec![1.0; n + 1];
                for i in (0..n).rev() {
                    suffix[i] = suffix[i + 1] * xv[i];
                }
                into!(*x, n, |buf| {
                    for i in 0..n {
                        buf[i] += g[0] * prefix[i] * suffix[i + 1];
                    }
                });
            }
            Op::LnFloor(x, floor) => {
                let xv = self.val(*x);
                into!(*x, xv.len(), |buf| {
                    for i in 0..xv.len() {
                        if xv[i] > *floor {
                            buf[i] += g[i] / xv[i];
                        }
                    }
                });
            }
        }
    }
}

pub struct Gradients {
    node: Vec<Option<Vec<f64>>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Sensitivity of the loss to any node, including plain inputs.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.node[v.0].as_deref()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn keep(mask: Option<&[bool]>, i: usize) -> bool {
    mask.map_or(true, |m| m[i])
}

fn check_mask(len: usize, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != len {
            return Err(Error::Shape("mask length mismatch".into()));
        }
        if !m.iter().any(|&k| k) {
            return Err(Error::Invalid("softmax over a fully masked vector".into()));
        }
    }
    Ok(())
}

fn masked_max(v: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (i, &a) in v.iter().enumerate() {
        if keep(mask, i) && a > mx {
            mx = a;
        }
    }
    mx
}

pub(crate) fn softmax_values(v: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_mask(v.len(), mask)?;
    let mx = masked_max(v, mask);
    let mut out = vec![0.0; v.len()];
    let mut sum = 0.0;
    for (i, &a) in v.iter().enumerate() {
        if keep(mask, i) {
            let e = (a - mx).exp();
            out[i] = e;
            sum += e;
        }
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(out)
}
