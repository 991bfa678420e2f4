//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every op as it is evaluated; [`Graph::backward`] walks
//! the record in reverse and accumulates vector-Jacobian products. Nodes are
//! appended in evaluation order, so the tape is acyclic by construction.

use std::sync::Arc;

use super::linalg::{gemm, SparseRows};
use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Contract(format!("unknown activation '{s}'"))),
        }
    }
}

/// `tanh` through a single `exp`, with an odd Taylor polynomial near zero.
///
/// About three times faster than `f64::tanh` and within a few ulps of it.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.0625 {
        let x2 = x * x;
        let p = 62.0 / 2835.0 + x2 * (-1382.0 / 155_925.0 + x2 * (21844.0 / 6_081_075.0));
        x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * p))))
    } else if a > 20.0 {
        1f64.copysign(x)
    } else {
        let e = (-2.0 * a).exp();
        ((1.0 - e) / (1.0 + e)).copysign(x)
    }
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0
                }
            }),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = tanh(*v)),
        }
    }

    /// Multiplies `g` by the derivative, expressed through the activation output.
    fn backprop(self, out: &[f64], g: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => g.iter_mut().zip(out).for_each(|(g, o)| {
                if *o <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => g.iter_mut().zip(out).for_each(|(g, o)| *g *= 1.0 - o * o),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Exp,
    Log,
    Square,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Token layout for grouped multi-head attention.
///
/// Rows are organised as `groups` independent sequences of `window` tokens.
/// Only the positions listed in `queries` produce outputs; `mask[q * window + m]`
/// says whether query `q` may attend to key `m`.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub groups: usize,
    pub window: usize,
    pub heads: usize,
    pub queries: Vec<usize>,
    pub mask: Vec<bool>,
}

enum Op {
    Leaf,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Scale(Var, f64),
    Shift(Var),
    LinComb(Vec<(Var, f64)>),
    Sum(Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        act: Activation,
    },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Sparse {
        x: Var,
        op: Arc<SparseRows>,
    },
    Cols {
        x: Var,
        start: usize,
    },
    Rows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        pos: Var,
        layout: Arc<AttentionLayout>,
        probs: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to the leaves it was asked about.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`; zeros when `v` did not influence the root.
    pub fn get(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shapes[v.0].clone(), self.get(v)).expect("gradient shape")
    }
}

/// Recording tape. One graph per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1..].iter().product())
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after position `len`.
    ///
    /// Callers must not hold handles to the dropped nodes.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let mut out = self.value(x).to_vec();
        match kind {
            Unary::Exp => out.iter_mut().for_each(|v| *v = v.exp()),
            Unary::Log => out.iter_mut().for_each(|v| *v = v.ln()),
            Unary::Square => out.iter_mut().for_each(|v| *v *= *v),
            Unary::Tanh => out.iter_mut().for_each(|v| *v = tanh(*v)),
            Unary::Relu => Activation::Relu.apply(&mut out),
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(shape, out, Op::Unary(x, kind), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        contract!(
            self.value(a).len() == self.value(b).len(),
            "elementwise op on shapes {:?} and {:?}",
            self.shape(a),
            self.shape(b)
        );
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<f64> = match kind {
            Binary::Add => va.iter().zip(vb).map(|(x, y)| x + y).collect(),
            Binary::Sub => va.iter().zip(vb).map(|(x, y)| x - y).collect(),
            Binary::Mul => va.iter().zip(vb).map(|(x, y)| x * y).collect(),
            Binary::Div => va.iter().zip(vb).map(|(x, y)| x / y).collect(),
        };
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(shape, out, Op::Binary(a, b, kind), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(shape, out, Op::Scale(x, c), ng)
    }

    /// Adds the constant `c` to every element.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(shape, out, Op::Shift(x), ng)
    }

    /// `sum_i c_i * x_i` over equally-shaped inputs.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        contract!(!terms.is_empty(), "lincomb needs at least one term");
        let n = self.value(terms[0].0).len();
        let mut out = vec![0.0; n];
        let mut ng = false;
        for &(v, c) in terms {
            contract!(self.value(v).len() == n, "lincomb shape mismatch");
            ng |= self.ng(v);
            if c != 0.0 {
                for (o, x) in out.iter_mut().zip(self.value(v)) {
                    *o += c * x;
                }
            }
        }
        let shape = self.shape(terms[0].0).to_vec();
        let kept = terms.iter().copied().filter(|t| t.1 != 0.0).collect();
        Ok(self.push(shape, out, Op::LinComb(kept), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    /// `act(x * w + b)` with `x: R x in`, `w: in x out`, `b: out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>, act: Activation) -> Result<Var> {
        let (r, din) = rows_cols(self.shape(x));
        let ws = self.shape(w);
        contract!(
            ws.len() == 2 && ws[0] == din,
            "dense: input width {din} vs weight {:?}",
            ws
        );
        let dout = ws[1];
        let mut out = vec![0.0; r * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            contract!(bv.len() == dout, "dense: bias length {} vs {dout}", bv.len());
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(r, din, dout, self.value(x), false, self.value(w), false, &mut out, 1.0);
        act.apply(&mut out);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(vec![r, dout], out, Op::Dense { x, w, b, act }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rows_cols(self.shape(a));
        let (k2, n) = rows_cols(self.shape(b));
        contract!(k == k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// Adds the row vector `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.shape(x));
        contract!(self.value(row).len() == c, "add_row width mismatch");
        let rv = self.value(row);
        let mut out = self.value(x).to_vec();
        for chunk in out.chunks_mut(c) {
            chunk.iter_mut().zip(rv).for_each(|(o, r)| *o += r);
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(shape, out, Op::AddRow(x, row), ng))
    }

    /// Applies a constant sparse operator to `x: n_cols x c` and reshapes the
    /// `n_rows x c` result into `(n_rows / group) x (group * c)`.
    pub fn sparse(&mut self, op: &Arc<SparseRows>, x: Var, group: usize) -> Result<Var> {
        let (n, c) = rows_cols(self.shape(x));
        contract!(n == op.n_cols(), "sparse op expects {} rows, got {n}", op.n_cols());
        contract!(
            group > 0 && op.n_rows() % group == 0,
            "sparse op rows {} not divisible by group {group}",
            op.n_rows()
        );
        let out = op.apply(self.value(x), c);
        let ng = self.ng(x);
        Ok(self.push(
            vec![op.n_rows() / group, group * c],
            out,
            Op::Sparse { x, op: Arc::clone(op) },
            ng,
        ))
    }

    /// Column slice `[start, start + len)` of a matrix.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        contract!(start + len <= c, "column slice {start}+{len} exceeds width {c}");
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![r, len], out, Op::Cols { x, start }, ng))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            contract!(i < r, "row index {i} out of range {r}");
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![idx.len(), c], out, Op::Rows { x, idx: idx.to_vec() }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "concat of nothing");
        let c = rows_cols(self.shape(parts[0])).1;
        let mut out = Vec::new();
        let mut r = 0;
        let mut ng = false;
        for &p in parts {
            let (pr, pc) = rows_cols(self.shape(p));
            contract!(pc == c, "concat width mismatch {pc} vs {c}");
            out.extend_from_slice(self.value(p));
            r += pr;
            ng |= self.ng(p);
        }
        Ok(self.push(vec![r, c], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        contract!(
            shape.iter().product::<usize>() == self.value(x).len(),
            "reshape {:?} -> {:?}",
            self.shape(x),
            shape
        );
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Reshape(x), ng))
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (r, c) = rows_cols(self.shape(x));
        contract!(
            self.value(gain).len() == c && self.value(bias).len() == c,
            "layer_norm parameter width"
        );
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Masked multi-head attention with additive per-pair key encodings.
    ///
    /// `q`: `(groups * nq) x C`, `k`, `v`: `(groups * window) x C`,
    /// `pos`: `(nq * window) x C`, shared across groups and added to the keys.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, pos: Var, layout: &Arc<AttentionLayout>) -> Result<Var> {
        let l = layout.as_ref();
        let nq = l.queries.len();
        let (w, g, h) = (l.window, l.groups, l.heads);
        let (qr, c) = rows_cols(self.shape(q));
        contract!(qr == g * nq, "attention: query rows {qr} vs {}", g * nq);
        contract!(h > 0 && c % h == 0, "attention: width {c} not divisible by heads {h}");
        contract!(
            self.shape(k) == [g * w, c] && self.shape(v) == [g * w, c],
            "attention: key/value shape"
        );
        contract!(self.shape(pos) == [nq * w, c], "attention: positional shape");
        contract!(l.mask.len() == nq * w, "attention: mask shape");
        for qi in 0..nq {
            contract!(
                l.mask[qi * w..(qi + 1) * w].iter().any(|m| *m),
                "attention: query {qi} has no admissible keys"
            );
        }
        let dh = c / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv, pv) = (self.value(q), self.value(k), self.value(v), self.value(pos));
        let mut probs = vec![0.0; g * h * nq * w];
        let mut out = vec![0.0; g * nq * c];
        let mut scores = vec![0.0; w];
        for gi in 0..g {
            for hi in 0..h {
                let cs = hi * dh;
                for qi in 0..nq {
                    let qrow = &qv[(gi * nq + qi) * c + cs..(gi * nq + qi) * c + cs + dh];
                    let mut max = f64::NEG_INFINITY;
                    for m in 0..w {
                        if !l.mask[qi * w + m] {
                            continue;
                        }
                        let krow = &kv[(gi * w + m) * c + cs..(gi * w + m) * c + cs + dh];
                        let prow = &pv[(qi * w + m) * c + cs..(qi * w + m) * c + cs + dh];
                        let mut s = 0.0;
                        for t in 0..dh {
                            s += qrow[t] * (krow[t] + prow[t]);
                        }
                        s *= scale;
                        scores[m] = s;
                        max = max.max(s);
                    }
                    let p = &mut probs[((gi * h + hi) * nq + qi) * w..((gi * h + hi) * nq + qi + 1) * w];
                    let mut z = 0.0;
                    for m in 0..w {
                        if l.mask[qi * w + m] {
                            p[m] = (scores[m] - max).exp();
                            z += p[m];
                        }
                    }
                    p.iter_mut().for_each(|x| *x /= z);
                    let orow = &mut out[(gi * nq + qi) * c + cs..(gi * nq + qi) * c + cs + dh];
                    for m in 0..w {
                        if p[m] == 0.0 {
                            continue;
                        }
                        let vrow = &vv[(gi * w + m) * c + cs..(gi * w + m) * c + cs + dh];
                        for t in 0..dh {
                            orow[t] += p[m] * vrow[t];
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v) || self.ng(pos);
        Ok(self.push(
            vec![g * nq, c],
            out,
            Op::Attention {
                q,
                k,
                v,
                pos,
                layout: Arc::clone(layout),
                probs,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar root.
    ///
    /// Fails if the root is not a scalar or if any value on the path to the
    /// root is non-finite.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        contract!(
            self.value(root).len() == 1,
            "backward root must be scalar, got shape {:?}",
            self.shape(root)
        );
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].needs_grad {
            return Ok(self.finish(grads));
        }
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(bad) = node.value.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite forward value at tape node {i} (element {bad})"
                )));
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(self.finish(grads))
    }

    fn finish(&self, mut grads: Vec<Option<Vec<f64>>>) -> Gradients {
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[i] = None;
            }
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, kind) => {
                let xv = self.value(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        dx[i] += g[i]
                            * match kind {
                                Unary::Exp => out[i],
                                Unary::Log => 1.0 / xv[i],
                                Unary::Square => 2.0 * xv[i],
                                Unary::Tanh => 1.0 - out[i] * out[i],
                                Unary::Relu => {
                                    if xv[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                            };
                    }
                }
            }
            Op::Binary(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        da[i] += match kind {
                            Binary::Add | Binary::Sub => g[i],
                            Binary::Mul => g[i] * bv[i],
                            Binary::Div => g[i] / bv[i],
                        };
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        db[i] += match kind {
                            Binary::Add => g[i],
                            Binary::Sub => -g[i],
                            Binary::Mul => g[i] * av[i],
                            Binary::Div => -g[i] * av[i] / (bv[i] * bv[i]),
                        };
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::Shift(x) | Op::Reshape(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if let Some(dv) = self.acc(grads, v) {
                        dv.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Dense { x, w, b, act } => {
                let (r, din) = rows_cols(self.shape(*x));
                let dout = self.shape(*w)[1];
                let mut gp = g.to_vec();
                act.backprop(out, &mut gp);
                if let Some(b) = b {
                    if let Some(db) = self.acc(grads, *b) {
                        for row in gp.chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                let wv = self.value(*w);
                if let Some(dx) = self.acc(grads, *x) {
                    gemm(r, dout, din, &gp, false, wv, true, dx, 1.0);
                }
                let xv = self.value(*x);
                if let Some(dw) = self.acc(grads, *w) {
                    gemm(din, r, dout, xv, true, &gp, false, dw, 1.0);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(self.shape(*a));
                let n = rows_cols(self.shape(*b)).1;
                let bv = self.value(*b);
                if let Some(da) = self.acc(grads, *a) {
                    gemm(m, n, k, g, false, bv, true, da, 1.0);
                }
                let av = self.value(*a);
                if let Some(db) = self.acc(grads, *b) {
                    gemm(k, m, n, av, true, g, false, db, 1.0);
                }
            }
            Op::AddRow(x, row) => {
                let c = self.value(*row).len();
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(dr) = self.acc(grads, *row) {
                    for chunk in g.chunks(c) {
                        dr.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sparse { x, op } => {
                let c = rows_cols(self.shape(*x)).1;
                if let Some(dx) = self.acc(grads, *x) {
                    op.apply_transpose_add(g, c, dx);
                }
            }
            Op::Cols { x, start } => {
                let (r, c) = rows_cols(self.shape(*x));
                let len = node.shape[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..len {
                            dx[i * c + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::Rows { x, idx } => {
                let c = rows_cols(self.shape(*x)).1;
                if let Some(dx) = self.acc(grads, *x) {
                    for (o, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dx[i * c + j] += g[o * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(dp) = self.acc(grads, p) {
                        dp.iter_mut().zip(&g[off..off + len]).for_each(|(d, g)| *d += g);
                    }
                    off += len;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = rows_cols(self.shape(*x));
                let gv = self.value(*gain);
                if let Some(db) = self.acc(grads, *bias) {
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
                if let Some(dg) = self.acc(grads, *gain) {
                    for (row, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += row[j] * hrow[j];
                        }
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            dx[i * c + j] += inv_std[i] * (dh - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                pos,
                layout,
                probs,
            } => self.backprop_attention(g, grads, (*q, *k, *v, *pos), layout, probs),
        }
    }

    fn backprop_attention(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (q, k, v, pos): (Var, Var, Var, Var),
        layout: &AttentionLayout,
        probs: &[f64],
    ) {
        let nq = layout.queries.len();
        let (w, gs, h) = (layout.window, layout.groups, layout.heads);
        let c = self.shape(q)[1];
        let dh = c / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv, pv) = (self.value(q), self.value(k), self.value(v), self.value(pos));
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; pv.len()];
        let mut ds = vec![0.0; w];
        for gi in 0..gs {
            for hi in 0..h {
                let cs = hi * dh;
                for qi in 0..nq {
                    let p = &probs[((gi * h + hi) * nq + qi) * w..((gi * h + hi) * nq + qi + 1) * w];
                    let go = &g[(gi * nq + qi) * c + cs..(gi * nq + qi) * c + cs + dh];
                    let mut dot = 0.0;
                    for m in 0..w {
                        if p[m] == 0.0 {
                            ds[m] = 0.0;
                            continue;
                        }
                        let vb = (gi * w + m) * c + cs;
                        let mut da = 0.0;
                        for t in 0..dh {
                            da += go[t] * vv[vb + t];
                            dv[vb + t] += p[m] * go[t];
                        }
                        ds[m] = da;
                        dot += p[m] * da;
                    }
                    let qb = (gi * nq + qi) * c + cs;
                    for m in 0..w {
                        if p[m] == 0.0 {
                            continue;
                        }
                        let s = p[m] * (ds[m] - dot) * scale;
                        let kb = (gi * w + m) * c + cs;
                        let pb = (qi * w + m) * c + cs;
                        for t in 0..dh {
                            dq[qb + t] += s * (kv[kb + t] + pv[pb + t]);
                            dk[kb + t] += s * qv[qb + t];
                            dp[pb + t] += s * qv[qb + t];
                        }
                    }
                }
            }
        }
        for (var, d) in [(q, dq), (k, dk), (v, dv), (pos, dp)] {
            if let Some(acc) = self.acc(grads, var) {
                acc.iter_mut().zip(&d).for_each(|(a, d)| *a += d);
            }
        }
    }
}
