//! Reverse-mode differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records one forward computation. Parameters are read from a
//! borrowed [`Parameters`] store; [`Tape::backward`] accumulates into a
//! [`Gradients`] value with the same layout.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::objectives::{contrastive_loss_grad, token_xent_sum_grad, LossConfig};
use crate::text::TokenId;
use crate::{Error, Result};

pub type Tensor = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl Parameters {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients { tensors: self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `(name, l2 norm)` per tensor, for fault diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.iter().map(|(_, n, t)| (n.to_string(), t.iter().map(|x| x * x).sum::<f64>().sqrt())).collect()
    }
}

impl Default for Parameters {
    fn default() -> Self {
        Self::new()
    }
}

/// Tensors mirroring a [`Parameters`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * c);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    None,
    Causal,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Tensor> },
    MeanRows(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    StackRows(Vec<Var>),
    Dropout { x: Var, mask: Tensor },
    SumSquares(Var),
    /// Gradient with respect to each input, computed alongside the value.
    Loss { inputs: Vec<Var>, grads: Vec<Tensor> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p Parameters,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {a:?} vs {b:?}"))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Parameters) -> Self {
        Self { params, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn params(&self) -> &'p Parameters {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// The parameter tensor `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(shape_err("matmul", av.dim(), bv.dim()));
        }
        let out = av.dot(bv);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.nrows() != 1 || bv.ncols() != av.ncols() {
            return Err(shape_err("add_row", av.dim(), bv.dim()));
        }
        let out = av + bv;
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddRow(a, bias), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("add", av.dim(), bv.dim()));
        }
        let out = av + bv;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// `x @ w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let d = xv.ncols();
        if gv.dim() != (1, d) || bv.dim() != (1, d) {
            return Err(shape_err("layer_norm", xv.dim(), gv.dim()));
        }
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / d as f64;
            row -= mean;
            let var = row.dot(&row) / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= is;
            inv_std.push(is);
        }
        let out = &xhat * gv + bv;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Multi-head scaled dot-product attention on already projected inputs.
    ///
    /// `q` is `Tq x d`, `k` and `v` are `Tk x d`; heads split `d` evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Mask) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        if heads == 0 || d % heads != 0 || kv.ncols() != d || vv.dim() != kv.dim() {
            return Err(Error::Shape(format!(
                "attention: q {:?}, k {:?}, v {:?}, heads {heads}",
                qv.dim(),
                kv.dim(),
                vv.dim()
            )));
        }
        let (tq, tk) = (qv.nrows(), kv.nrows());
        if mask == Mask::Causal && tq != tk {
            return Err(shape_err("causal attention", qv.dim(), kv.dim()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((tq, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = &qv.slice(cols) * scale;
            let mut p = qh.dot(&kv.slice(cols).t());
            let flat = p.as_slice_mut().expect("fresh matmul output is contiguous");
            for (i, row) in flat.chunks_exact_mut(tk).enumerate() {
                let visible = if mask == Mask::Causal { i + 1 } else { tk };
                let (live, hidden) = row.split_at_mut(visible);
                let max = live.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut z = 0.0;
                for x in live.iter_mut() {
                    *x = (*x - max).exp();
                    z += *x;
                }
                let inv = 1.0 / z;
                for x in live.iter_mut() {
                    *x *= inv;
                }
                hidden.fill(0.0);
            }
            out.slice_mut(cols).assign(&p.dot(&vv.slice(cols)));
            probs.push(p);
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, ng))
    }

    /// Column means as a `1 x d` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.nrows() == 0 {
            return Err(Error::Shape("mean over zero rows".into()));
        }
        let out = xv.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        let ng = self.ng(x);
        Ok(self.push(out, Op::MeanRows(x), ng))
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let norms: Vec<f64> = xv.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
        if norms.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(Error::Numerical("cannot normalize a zero or non-finite row".into()));
        }
        let mut out = xv.clone();
        for (mut row, n) in out.axis_iter_mut(Axis(0)).zip(&norms) {
            row /= *n;
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::NormalizeRows { x, norms }, ng))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.nrows()) {
            return Err(Error::Shape(format!("row {bad} outside table of {} rows", tv.nrows())));
        }
        let out = tv.select(Axis(0), ids);
        let ng = self.ng(table);
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }, ng))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::StackRows(parts.to_vec()), ng))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mask = Array2::from_shape_fn(self.value(x).dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let out = self.value(x) * &mask;
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// `sum(x^2)` as a `1 x 1` value.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Array2::from_elem((1, 1), xv.iter().map(|a| a * a).sum());
        let ng = self.ng(x);
        self.push(out, Op::SumSquares(x), ng)
    }

    /// Symmetric contrastive loss of stacked unit rows `s` and `v`.
    pub fn contrastive(&mut self, s: Var, v: Var, cfg: &LossConfig) -> Result<Var> {
        let (loss, ds, dv) = contrastive_loss_grad(self.value(s), self.value(v), cfg)?;
        let ng = self.ng(s) || self.ng(v);
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::Loss { inputs: vec![s, v], grads: vec![ds, dv] }, ng))
    }

    /// Summed token cross-entropy over non-PAD targets, with the count of positions.
    pub fn token_xent_sum(&mut self, logits: Var, targets: &[TokenId]) -> Result<(Var, usize)> {
        let (sum, count, g) = token_xent_sum_grad(self.value(logits), targets)?;
        let ng = self.ng(logits);
        let v = self.push(Array2::from_elem((1, 1), sum), Op::Loss { inputs: vec![logits], grads: vec![g] }, ng);
        Ok((v, count))
    }

    /// Back-propagates `seeds` (node, upstream gradient) and adds parameter
    /// gradients into `grads`.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)], grads: &mut Gradients) -> Result<()> {
        if grads.tensors.len() != self.params.len() {
            return Err(Error::Shape("gradient layout does not match parameters".into()));
        }
        let Some(last) = seeds.iter().map(|(v, _)| v.0).max() else {
            return Ok(());
        };
        let mut adj: Vec<Option<Tensor>> = (0..=last).map(|_| None).collect();
        for (v, g) in seeds {
            if g.dim() != self.value(*v).dim() {
                return Err(shape_err("seed", g.dim(), self.value(*v).dim()));
            }
            accumulate(&mut adj[v.0], g.view());
        }
        for idx in (0..=last).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor| {
                if self.nodes[v.0].needs_grad {
                    match &mut adj[v.0] {
                        Some(a) => *a += &t,
                        slot => *slot = Some(t),
                    }
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.tensors[id.0] += &g,
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, b) => {
                    if self.ng(*b) {
                        send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*a, g);
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        send(*b, g.clone());
                    }
                    send(*a, g);
                }
                Op::Scale(a, c) => send(*a, g * *c),
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    if self.ng(*bias) {
                        send(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*gain) {
                        send(*gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let gv = self.value(*gain);
                        let mut dx = &g * gv;
                        let d = dx.ncols() as f64;
                        for ((mut row, xh), is) in dx.axis_iter_mut(Axis(0)).zip(xhat.axis_iter(Axis(0))).zip(inv_std) {
                            let m1 = row.sum() / d;
                            let m2 = row.dot(&xh) / d;
                            Zip::from(&mut row).and(&xh).for_each(|r, &h| *r = is * (*r - m1 - h * m2));
                        }
                        send(*x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx).and(self.value(*x)).for_each(|d, &xi| *d *= gelu_grad(xi));
                    send(*x, dx);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let go = g.slice(cols);
                        dv.slice_mut(cols).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(cols).t());
                        // softmax backward, row-wise
                        let mut ds = dp;
                        for (mut drow, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                            let dot = drow.dot(&prow);
                            Zip::from(&mut drow).and(&prow).for_each(|x, &pi| *x = pi * (*x - dot) * scale);
                        }
                        dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                        dk.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
                    }
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
                Op::MeanRows(x) => {
                    let n = self.value(*x).nrows();
                    let row = g.row(0).to_owned() / n as f64;
                    let dx = row.broadcast((n, row.len())).expect("broadcast").to_owned();
                    send(*x, dx);
                }
                Op::NormalizeRows { x, norms } => {
                    let y = node.value.as_ref().expect("value");
                    let mut dx = g;
                    for ((mut row, yr), n) in dx.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))).zip(norms) {
                        let dot = row.dot(&yr);
                        Zip::from(&mut row).and(&yr).for_each(|r, &yi| *r = (*r - yi * dot) / n);
                    }
                    send(*x, dx);
                }
                Op::Gather { table, ids } => {
                    let mut dt = Array2::zeros(self.value(*table).dim());
                    for (r, &i) in ids.iter().enumerate() {
                        let mut dst = dt.row_mut(i);
                        dst += &g.row(r);
                    }
                    send(*table, dt);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        send(p, g.slice(s![offset..offset + n, ..]).to_owned());
                        offset += n;
                    }
                }
                Op::Dropout { x, mask } => send(*x, g * mask),
                Op::SumSquares(x) => send(*x, self.value(*x) * (2.0 * g[[0, 0]])),
                Op::Loss { inputs, grads: local } => {
                    let up = g[[0, 0]];
                    for (&v, lg) in inputs.iter().zip(local) {
                        send(v, lg * up);
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.value(loss);
        if value.dim() != (1, 1) {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", value.dim())));
        }
        if !value[[0, 0]].is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {}", value[[0, 0]])));
        }
        let mut grads = self.params.zeros_like();
        self.backward_seeded(&[(loss, Array2::ones((1, 1)))], &mut grads)?;
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: ArrayView2<f64>) {
    match slot {
        Some(a) => *a += &g,
        None => *slot = Some(g.to_owned()),
    }
}

/// Evaluates `loss` on a fresh tape and returns its value and exact gradients.
pub fn grad<F>(params: &Parameters, loss: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let l = loss(&mut tape)?;
    let g = tape.backward(l)?;
    Ok((tape.scalar(l), g))
}


/// Finite-difference comparison for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    /// `max |analytic - numeric| / max(max |numeric|, max |analytic|, floor)`
    pub rel_err: f64,
}

/// Denominator floor; central differences with `h = 1e-5` carry roundoff of
/// order 1e-11, so smaller gradients are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the gradients of `loss` against central differences with step `h`.
///
/// Tensors with more than `max_entries` scalars are checked on a seeded
/// random subset of that size.
pub fn check_gradients<F>(params: &Parameters, loss: F, h: f64, max_entries: usize, seed: u64) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    check_gradients_terms(params, |t| Ok(vec![loss(t)?]), h, max_entries, seed)
}

/// As [`check_gradients`] for a loss given as a sum of scalar terms.
///
/// The analytic side differentiates the sum. The numeric side sums the
/// central differences of the individual terms. This is the same derivative,
/// but a large term that does not depend on the perturbed entry cancels
/// exactly instead of adding `eps * |term| / h` of roundoff.
pub fn check_gradients_terms<F>(params: &Parameters, terms: F, h: f64, max_entries: usize, seed: u64) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape<'_>) -> Result<Vec<Var>>,
{
    let (_, analytic) = grad(params, |t| {
        let parts = terms(t)?;
        let (&first, rest) = parts.split_first().ok_or_else(|| Error::invalid("loss has no terms"))?;
        rest.iter().try_fold(first, |acc, &x| t.add(acc, x))
    })?;
    let mut rng = crate::rng::rng_for(seed, &[0x6772_6164]);
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for (id, name, t) in params.iter() {
        let mut entries: Vec<usize> = (0..t.len()).collect();
        if entries.len() > max_entries {
            rand::seq::SliceRandom::shuffle(entries.as_mut_slice(), &mut rng);
            entries.truncate(max_entries);
            entries.sort_unstable();
        }
        let (mut worst_diff, mut scale) = (0.0f64, GRAD_CHECK_FLOOR);
        for &idx in &entries {
            let (r, c) = (idx / t.ncols(), idx % t.ncols());
            let x0 = t[[r, c]];
            work.get_mut(id)[[r, c]] = x0 + h;
            let lp = term_values(&work, &terms)?;
            work.get_mut(id)[[r, c]] = x0 - h;
            let lm = term_values(&work, &terms)?;
            work.get_mut(id)[[r, c]] = x0;
            let numeric = lp.iter().zip(&lm).map(|(p, m)| (p - m) / (2.0 * h)).sum::<f64>();
            let a = analytic.get(id)[[r, c]];
            worst_diff = worst_diff.max((a - numeric).abs());
            scale = scale.max(numeric.abs()).max(a.abs());
        }
        out.push(GradCheck { name: name.to_string(), checked: entries.len(), rel_err: worst_diff / scale });
    }
    Ok(out)
}

fn term_values<F>(params: &Parameters, terms: &F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<'_>) -> Result<Vec<Var>>,
{
    let mut tape = Tape::new(params);
    let parts = terms(&mut tape)?;
    Ok(parts.iter().map(|&v| tape.scalar(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn fd_check<F>(params: &Parameters, f: F) -> f64
    where
        F: Fn(&mut Tape<'_>) -> Result<Var>,
    {
        let checks = check_gradients(params, f, 1e-5, usize::MAX, 0).unwrap();
        assert_eq!(checks.len(), params.len());
        checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Parameters::new();
        let a = p.insert("a", random(&mut rng, 3, 4)).unwrap();
        let b = p.insert("b", random(&mut rng, 1, 5)).unwrap();
        let (_, g) = grad(&p, |t| {
            let (va, vb) = (t.param(a), t.param(b));
            let (sa, sb) = (t.sum_squares(va), t.sum_squares(vb));
            let s = t.add(sa, sb)?;
            Ok(t.scale(s, 0.5))
        })
        .unwrap();
        assert_eq!(g.get(a), p.get(a));
        assert_eq!(g.get(b), p.get(b));
    }

    #[test]
    fn every_op_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Parameters::new();
        let table = p.insert("table", random(&mut rng, 6, 4)).unwrap();
        let w = p.insert("w", random(&mut rng, 4, 4)).unwrap();
        let b = p.insert("b", random(&mut rng, 1, 4)).unwrap();
        let gain = p.insert("gain", random(&mut rng, 1, 4)).unwrap();
        let beta = p.insert("beta", random(&mut rng, 1, 4)).unwrap();
        let wk = p.insert("wk", random(&mut rng, 4, 4)).unwrap();
        let out = p.insert("out", random(&mut rng, 4, 6)).unwrap();
        let loss = |t: &mut Tape<'_>| -> Result<Var> {
            let tab = t.param(table);
            let x = t.gather(tab, &[1, 3, 3, 0, 5])?;
            let (wv, bv, gv, be, kv, ov) =
                (t.param(w), t.param(b), t.param(gain), t.param(beta), t.param(wk), t.param(out));
            let n = t.layer_norm(x, gv, be)?;
            let q = t.linear(n, wv, bv)?;
            let k = t.matmul(n, kv)?;
            let a = t.attention(q, k, n, 2, Mask::Causal)?;
            let c = t.attention(a, x, x, 2, Mask::None)?;
            let act = t.gelu(c);
            let r = t.add(act, x)?;
            let logits = t.matmul(r, ov)?;
            let (xent, count) = t.token_xent_sum(logits, &[4, 2, 0, 5, 1])?;
            let xent = t.scale(xent, 1.0 / count as f64);
            let pooled = t.mean_rows(r)?;
            let first = t.gather(tab, &[2])?;
            let s = t.stack_rows(&[pooled, first])?;
            let s = t.normalize_rows(s)?;
            let v2 = t.gather(tab, &[0, 4])?;
            let v2 = t.normalize_rows(v2)?;
            let con = t.contrastive(s, v2, &LossConfig { tau: 0.5, ..LossConfig::clip() })?;
            t.add(con, xent)
        };
        let err = fd_check(&p, loss);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn causal_rows_ignore_later_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Parameters::new();
        let x = random(&mut rng, 5, 4);
        let mut y = x.clone();
        y.row_mut(4).fill(9.0);
        let run = |m: Tensor| {
            let mut t = Tape::new(&p);
            let v = t.input(m);
            let a = t.attention(v, v, v, 2, Mask::Causal).unwrap();
            t.value(a).clone()
        };
        let (a, b) = (run(x), run(y));
        assert_eq!(a.slice(s![..4, ..]), b.slice(s![..4, ..]));
    }

    #[test]
    fn attention_matches_straight_line_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Parameters::new();
        let (q, k, v) = (random(&mut rng, 3, 2), random(&mut rng, 4, 2), random(&mut rng, 4, 2));
        let mut t = Tape::new(&p);
        let (vq, vk, vv) = (t.input(q.clone()), t.input(k.clone()), t.input(v.clone()));
        let a = t.attention(vq, vk, vv, 1, Mask::None).unwrap();
        let got = t.value(a);
        for i in 0..3 {
            let sc: Vec<f64> = (0..4).map(|j| (q[[i, 0]] * k[[j, 0]] + q[[i, 1]] * k[[j, 1]]) / 2f64.sqrt()).collect();
            let z: f64 = sc.iter().map(|x| x.exp()).sum();
            for c in 0..2 {
                let want: f64 = (0..4).map(|j| sc[j].exp() / z * v[[j, c]]).sum();
                assert!((got[[i, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes_and_nonfinite_loss() {
        let p = Parameters::new();
        let mut t = Tape::new(&p);
        let a = t.input(Array2::zeros((2, 3)));
        let b = t.input(Array2::zeros((2, 3)));
        assert!(t.matmul(a, b).is_err());
        assert!(t.attention(a, a, a, 2, Mask::None).is_err());
        assert!(t.normalize_rows(a).is_err());
        let nan = t.input(Array2::from_elem((1, 1), f64::NAN));
        assert!(t.backward(nan).is_err());
    }
}
