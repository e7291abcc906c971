//! Tape-based reverse-mode differentiation over 2-D matrices.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse and returns the gradient of a scalar loss
//! with respect to every node that depends on a parameter leaf.
//!
//! Non-finite values poison the tape: the first offending node is remembered
//! and reported by [`Tape::check`] and [`Tape::backward`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    Gather { src: usize, rows: Vec<usize> },
    Sum(usize),
    Mean(usize),
    HuberQuantile {
        pred: usize,
        target: Vec<f64>,
        taus: Vec<f64>,
        weights: Vec<f64>,
        kappa: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::HuberQuantile { .. } => "huber_quantile",
        }
    }
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    label: Option<String>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    poisoned: Option<String>,
    kink_hasher: Option<DefaultHasher>,
}

/// `c = a · b` for row-major `a: [m, k]`, `b: [k, n]`, with optional transposes.
/// `c` is overwritten when `accumulate` is false.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    // Stored layout of `a` is [m, k] when not transposed and [k, m] otherwise.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices are sized for the given dimensions and strides, as
    // asserted above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

/// Derivative of the Huber quantile loss with respect to the error `u`.
pub(crate) fn huber_quantile_grad(tau: f64, u: f64, kappa: f64) -> f64 {
    let indicator = if u <= 0.0 { 1.0 } else { 0.0 };
    if kappa == 0.0 {
        return tau - indicator;
    }
    let w = (tau - indicator).abs();
    if u.abs() <= kappa {
        w * u / kappa
    } else {
        w * u.signum()
    }
}

/// Huber quantile loss `|τ − 1{u ≤ 0}| · L_κ(u) / κ`; `κ = 0` gives the plain
/// quantile loss `(τ − 1{u ≤ 0}) · u`.
pub(crate) fn huber_quantile_value(tau: f64, u: f64, kappa: f64) -> f64 {
    let indicator = if u <= 0.0 { 1.0 } else { 0.0 };
    if kappa == 0.0 {
        return (tau - indicator) * u;
    }
    let huber = if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    };
    (tau - indicator).abs() * huber / kappa
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records which side of every non-smooth point (ReLU, Huber branches)
    /// each element lands on. Used by finite-difference checks to discard
    /// perturbations that cross a kink.
    pub fn track_kinks(&mut self) {
        self.kink_hasher = Some(DefaultHasher::new());
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kink_hasher.as_ref().map(|h| h.finish())
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.poisoned = None;
        if self.kink_hasher.is_some() {
            self.kink_hasher = Some(DefaultHasher::new());
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        // The branch-free scan vectorizes; the position is only needed on failure.
        if self.poisoned.is_none() && value.iter().fold(false, |bad, v| bad | !v.is_finite()) {
            if let Some(i) = value.iter().position(|v| !v.is_finite()) {
                self.poisoned = Some(format!(
                    "node #{} ({}) at flat index {i}",
                    self.nodes.len(),
                    op.name()
                ));
            }
        }
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Attaches a human-readable name used in error messages.
    pub fn label(&mut self, v: Var, name: impl Into<String>) {
        let name = name.into();
        if let Some(p) = &mut self.poisoned {
            if p.starts_with(&format!("node #{} ", v.0)) {
                *p = format!("`{name}` {p}");
            }
        }
        self.nodes[v.0].label = Some(name);
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on a non-scalar node");
        n.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Input, false)
    }

    pub fn input_raw(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "input_raw shape");
        self.push(rows, cols, data, Op::Input, false)
    }

    /// Differentiable leaf holding a copy of a parameter.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Param, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions: [{m}, {k}] x [{k2}, {n}]");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(m, n, out, Op::MatMul(a.0, b.0), ng)
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "add_row expects a [1, {n}] row");
        let bias = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(m, n, out, Op::AddRow(a.0, b.0), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "elementwise {} shape", op.name());
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(shape.0, shape.1, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * c).collect();
        let ng = self.node(a).needs_grad;
        self.push(m, n, out, Op::Scale(a.0, c), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.node(a).needs_grad;
        self.push(m, n, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        if let Some(h) = &mut self.kink_hasher {
            for x in &self.nodes[a.0].value {
                (*x > 0.0).hash(h);
            }
        }
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat row counts");
                c
            })
            .collect();
        let cols: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.node(p).needs_grad);
        self.push(rows, cols, out, Op::Concat(parts.iter().map(|p| p.0).collect()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice [{start}, {}) of {n} columns", start + len);
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let ng = self.node(a).needs_grad;
        self.push(m, len, out, Op::Slice { src: a.0, start }, ng)
    }

    /// Selects rows of `a` by index; rows may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let (m, n) = self.shape(a);
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert!(r < m, "gather row {r} of {m}");
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let ng = self.node(a).needs_grad;
        self.push(
            rows.len(),
            n,
            out,
            Op::Gather {
                src: a.0,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.node(a).needs_grad;
        self.push(1, 1, vec![s], Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.node(a).needs_grad;
        self.push(1, 1, vec![s], Op::Mean(a.0), ng)
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Var {
        let (m, n) = self.shape(pred);
        assert_eq!(target.len(), m * n, "mse target length");
        let t = self.input_raw(m, n, target.to_vec());
        let d = self.sub(pred, t);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// `Σ_r w_r Σ_c ρ^κ_{τ_rc}(target_rc − pred_rc)` as a scalar node.
    ///
    /// `target` and `taus` are row-major with the shape of `pred`; `weights`
    /// holds one weight per row.
    pub fn weighted_huber_quantile(
        &mut self,
        pred: Var,
        target: &[f64],
        taus: &[f64],
        weights: &[f64],
        kappa: f64,
    ) -> Var {
        let (m, n) = self.shape(pred);
        assert_eq!(target.len(), m * n, "quantile target length");
        assert_eq!(taus.len(), m * n, "quantile tau length");
        assert_eq!(weights.len(), m, "quantile weight length");
        let p = &self.nodes[pred.0].value;
        let mut total = 0.0;
        for r in 0..m {
            let w = weights[r];
            let mut row = 0.0;
            for c in 0..n {
                let i = r * n + c;
                row += huber_quantile_value(taus[i], target[i] - p[i], kappa);
            }
            total += w * row;
        }
        if let Some(h) = &mut self.kink_hasher {
            for i in 0..m * n {
                let u = target[i] - p[i];
                (u <= 0.0).hash(h);
                (u.abs() <= kappa).hash(h);
            }
        }
        let ng = self.node(pred).needs_grad;
        self.push(
            1,
            1,
            vec![total],
            Op::HuberQuantile {
                pred: pred.0,
                target: target.to_vec(),
                taus: taus.to_vec(),
                weights: weights.to_vec(),
                kappa,
            },
            ng,
        )
    }

    /// Returns an error naming the first node that produced a non-finite value.
    pub fn check(&self) -> Result<()> {
        match &self.poisoned {
            Some(msg) => Err(Error::NonFinite(msg.clone())),
            None => Ok(()),
        }
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                expected: vec![1, 1],
                actual: vec![r, c],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                let name = node.label.clone().unwrap_or_else(|| node.op.name().to_owned());
                return Err(Error::NonFinite(format!(
                    "gradient of node #{i} ({name}) at flat index {j}"
                )));
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |j: usize| self.nodes[j].needs_grad;
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (_, k) = (self.nodes[*a].rows, self.nodes[*a].cols);
                if needs(*a) {
                    let buf = grad_slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, &self.nodes[*b].value, true, buf, true);
                }
                if needs(*b) {
                    let buf = grad_slot(grads, *b, k * n);
                    gemm(k, m, n, &self.nodes[*a].value, true, g, false, buf, true);
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    add_into(grad_slot(grads, *a, m * n), g);
                }
                if needs(*b) {
                    let buf = grad_slot(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        buf.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    add_into(grad_slot(grads, *a, m * n), g);
                }
                if needs(*b) {
                    add_into(grad_slot(grads, *b, m * n), g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(grad_slot(grads, *a, m * n), g);
                }
                if needs(*b) {
                    let buf = grad_slot(grads, *b, m * n);
                    buf.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = &self.nodes[*b].value;
                    let buf = grad_slot(grads, *a, m * n);
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(other) {
                        *o += x * y;
                    }
                }
                if needs(*b) {
                    let other = &self.nodes[*a].value;
                    let buf = grad_slot(grads, *b, m * n);
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(other) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                let buf = grad_slot(grads, *a, m * n);
                buf.iter_mut().zip(g).for_each(|(o, x)| *o += x * c);
            }
            Op::Relu(a) => {
                let input = &self.nodes[*a].value;
                let buf = grad_slot(grads, *a, m * n);
                for ((o, x), v) in buf.iter_mut().zip(g).zip(input) {
                    if *v > 0.0 {
                        *o += x;
                    }
                }
            }
            Op::Tanh(a) => {
                let buf = grad_slot(grads, *a, m * n);
                for ((o, x), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += x * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let buf = grad_slot(grads, *a, m * n);
                for ((o, x), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += x * y * (1.0 - y);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].cols;
                    if needs(p) {
                        let buf = grad_slot(grads, p, m * w);
                        for r in 0..m {
                            let src = &g[r * n + offset..r * n + offset + w];
                            buf[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, x)| *o += x);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { src, start } => {
                let width = self.nodes[*src].cols;
                let buf = grad_slot(grads, *src, m * width);
                for r in 0..m {
                    buf[r * width + start..r * width + start + n]
                        .iter_mut()
                        .zip(&g[r * n..(r + 1) * n])
                        .for_each(|(o, x)| *o += x);
                }
            }
            Op::Gather { src, rows } => {
                let src_rows = self.nodes[*src].rows;
                let buf = grad_slot(grads, *src, src_rows * n);
                for (i, &r) in rows.iter().enumerate() {
                    buf[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(&g[i * n..(i + 1) * n])
                        .for_each(|(o, x)| *o += x);
                }
            }
            Op::Sum(a) => {
                let len = self.nodes[*a].value.len();
                grad_slot(grads, *a, len).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean(a) => {
                let len = self.nodes[*a].value.len();
                let s = g[0] / len.max(1) as f64;
                grad_slot(grads, *a, len).iter_mut().for_each(|o| *o += s);
            }
            Op::HuberQuantile {
                pred,
                target,
                taus,
                weights,
                kappa,
            } => {
                let p = &self.nodes[*pred];
                let cols = p.cols;
                let buf = grad_slot(grads, *pred, p.value.len());
                for (i, o) in buf.iter_mut().enumerate() {
                    let u = target[i] - p.value[i];
                    *o -= g[0] * weights[i / cols] * huber_quantile_grad(taus[i], u, *kappa);
                }
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    buf.iter_mut().zip(g).for_each(|(o, x)| *o += x);
}
