//! Reverse-mode gradient tape over batched matrices.
//!
//! Each node holds a `rows x cols` value; rows are independent samples.
//! Parameters are not stored on the tape: affine nodes refer to them by
//! index into the slice handed to [`Tape::forward_affine`] and
//! [`Tape::backward`], so a single network can be unrolled many times
//! (truncated BPTT) and its gradients accumulate into one set of slots.

use super::kernels;
use super::matrix::{gemm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Affine { terms: Vec<(Var, usize)>, bias: usize },
    Elu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    RowSumSq(Var),
    GeodesicSq(Var, Var),
    Scale(Var, f64),
    ColSlice { x: Var, start: usize },
    Concat(Vec<Var>),
    QuatExp(Var),
    QuatMul(Var, Var),
    Normalize(Var),
    Canonical { x: Var, signs: Vec<f64> },
    QuatTo6d(Var),
    RowSelect { a: Var, b: Var, take_a: Vec<bool> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Matrix>,
    nodes: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to a node, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].as_ref()
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, true)
    }

    /// `sum_k x_k W_k + b` with `W_k = params[idx_k]`, `b = params[bias]`.
    pub fn forward_affine(&mut self, params: &[&Matrix], terms: &[(Var, usize)], bias: usize) -> Var {
        let inputs: Vec<(&Matrix, &Matrix)> =
            terms.iter().map(|&(v, p)| (&self.nodes[v.0].value, params[p])).collect();
        let value = kernels::affine(&inputs, params[bias]);
        self.push(value, Op::Affine { terms: terms.to_vec(), bias }, true)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = kernels::elu(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::Elu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        for (v, w) in value.data.iter_mut().zip(&self.value(b).data) {
            *v -= w;
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Row sums of squares, `B x c -> B x 1`.
    pub fn row_sum_sq(&mut self, x: Var) -> Var {
        let value = kernels::row_sum_sq(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::RowSumSq(x), ng)
    }

    /// Squared geodesic angle between quaternion rows, `B x 1`.
    pub fn geodesic_sq(&mut self, a: Var, b: Var) -> Var {
        let value = kernels::geodesic_sq_rows(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::GeodesicSq(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).col_slice(start, len);
        let ng = self.ng(x);
        self.push(value, Op::ColSlice { x, start }, ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::hconcat(&mats);
        let ng = parts.iter().any(|v| self.ng(*v));
        self.push(value, Op::Concat(parts.to_vec()), ng)
    }

    /// Row-wise exponential map, `B x 3 -> B x 4` (unnormalized).
    pub fn quat_exp(&mut self, t: Var) -> Var {
        let value = kernels::quat_exp_rows(self.value(t));
        let ng = self.ng(t);
        self.push(value, Op::QuatExp(t), ng)
    }

    /// Row-wise Hamilton product `a ⊗ b`.
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Var {
        let value = kernels::quat_mul_rows(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::QuatMul(a, b), ng)
    }

    pub fn normalize(&mut self, x: Var) -> Var {
        let value = kernels::normalize_rows(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::Normalize(x), ng)
    }

    /// Row-wise sign canonicalization of quaternions (`w >= 0`).
    pub fn canonical(&mut self, x: Var) -> Var {
        let (value, signs) = kernels::canonical_rows(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::Canonical { x, signs }, ng)
    }

    /// Row-wise unit quaternion to the first two rotation-matrix columns.
    pub fn quat_to_6d(&mut self, q: Var) -> Var {
        let value = kernels::quat_to_6d_rows(self.value(q));
        let ng = self.ng(q);
        self.push(value, Op::QuatTo6d(q), ng)
    }

    /// Per-row choice between `a` (mask true) and `b`.
    pub fn row_select(&mut self, a: Var, b: Var, take_a: Vec<bool>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "row_select shape mismatch");
        assert_eq!(take_a.len(), va.rows, "row_select mask length");
        let mut value = vb.clone();
        for (r, &t) in take_a.iter().enumerate() {
            if t {
                value.row_mut(r).copy_from_slice(va.row(r));
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::RowSelect { a, b, take_a }, ng)
    }

    /// Propagates the seeded output gradients back through the tape.
    pub fn backward(&self, params: &[&Matrix], seeds: Vec<(Var, Matrix)>) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.nodes[v.0].value.shape(), "seed gradient shape");
            accumulate(&mut grads[v.0], g);
        }
        let mut pgrads: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Input => unreachable!(),
                Op::Affine { terms, bias } => {
                    let gb = &mut pgrads[*bias];
                    for r in 0..g.rows {
                        for (acc, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    for &(x, p) in terms {
                        let xv = &self.nodes[x.0].value;
                        gemm(1.0, xv, true, &g, false, 1.0, &mut pgrads[p]);
                        if self.ng(x) {
                            let mut gx = Matrix::zeros(xv.rows, xv.cols);
                            gemm(1.0, &g, false, params[p], true, 0.0, &mut gx);
                            accumulate(&mut grads[x.0], gx);
                        }
                    }
                }
                Op::Elu(x) => {
                    let mut gx = g;
                    for (gi, yi) in gx.data.iter_mut().zip(&node.value.data) {
                        if *yi <= 0.0 {
                            *gi *= yi + 1.0;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    for (gi, yi) in gx.data.iter_mut().zip(&node.value.data) {
                        *gi *= 1.0 - yi * yi;
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads[b.0], g.map(|v| -v));
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::RowSumSq(x) => {
                    let mut gx = self.nodes[x.0].value.clone();
                    for r in 0..gx.rows {
                        let k = 2.0 * g.data[r];
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::GeodesicSq(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (ga, gb) = kernels::geodesic_sq_rows_backward(av, bv, &g);
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Scale(x, s) => {
                    let mut gx = g;
                    gx.scale_assign(*s);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ColSlice { x, start } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        gx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols;
                        if self.ng(*p) {
                            accumulate(&mut grads[p.0], g.col_slice(c0, w));
                        }
                        c0 += w;
                    }
                }
                Op::QuatExp(t) => {
                    let gt = kernels::quat_exp_rows_backward(&self.nodes[t.0].value, &g);
                    accumulate(&mut grads[t.0], gt);
                }
                Op::QuatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (ga, gb) = kernels::quat_mul_rows_backward(av, bv, &g);
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Normalize(x) => {
                    let gx = kernels::normalize_rows_backward(&self.nodes[x.0].value, &node.value, &g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Canonical { x, signs } => {
                    let mut gx = g;
                    for (r, s) in signs.iter().enumerate() {
                        if *s < 0.0 {
                            for v in gx.row_mut(r) {
                                *v = -*v;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::QuatTo6d(q) => {
                    let gq = kernels::quat_to_6d_rows_backward(&self.nodes[q.0].value, &g);
                    accumulate(&mut grads[q.0], gq);
                }
                Op::RowSelect { a, b, take_a } => {
                    let mut ga = g.clone();
                    let mut gb = g;
                    for (r, &t) in take_a.iter().enumerate() {
                        let zero = if t { gb.row_mut(r) } else { ga.row_mut(r) };
                        zero.iter_mut().for_each(|v| *v = 0.0);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
            }
        }
        Gradients { params: pgrads, nodes: grads }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
