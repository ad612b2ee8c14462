//! Append-only computation record with reverse-mode accumulation.
//!
//! Every operation pushes one node holding its forward value and the parent
//! links needed to pull gradients back. Append order is a topological order,
//! so the backward pass is a single reverse sweep that touches each node once
//! and accumulates parent contributions in a fixed order.

use std::rc::Rc;

use super::tensor::{matmul_nt_into, matmul_tn_into};
use super::{DiffError, Tensor};

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise binary op is expanded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `1 × c` repeated over rows.
    Row,
    /// `r × 1` repeated over columns.
    Col,
    /// `1 × 1`.
    Scalar,
}

/// One entry of a sparse linear remap: `out[dst] += coef * src[src]` on flat indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapEntry {
    pub src: usize,
    pub dst: usize,
    pub coef: f64,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Transpose(Var),
    RowSoftmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    CosineRows(Var, Var),
    NormalizeRows(Var),
    SmoothL1(Var, Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SparseMap(Var, Rc<Vec<MapEntry>>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by a backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// True when no node received a gradient.
    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

/// Smooth-L1 transition point between the quadratic and linear branches.
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, l: (usize, usize), r: (usize, usize)) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: l,
        right: r,
    }
}

fn bcast_of(op: &'static str, l: (usize, usize), r: (usize, usize)) -> Result<Bcast, DiffError> {
    if l == r {
        Ok(Bcast::Same)
    } else if r == (1, 1) {
        Ok(Bcast::Scalar)
    } else if r.0 == 1 && r.1 == l.1 {
        Ok(Bcast::Row)
    } else if r.1 == 1 && r.0 == l.0 {
        Ok(Bcast::Col)
    } else {
        Err(shape_err(op, l, r))
    }
}

#[inline]
fn bidx(b: Bcast, cols: usize, k: usize) -> usize {
    match b {
        Bcast::Same => k,
        Bcast::Row => k % cols,
        Bcast::Col => k / cols,
        Bcast::Scalar => 0,
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient-tracked input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn rg1(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn rg2(&self, a: Var, b: Var) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var, DiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bc = bcast_of(name, av.shape(), bv.shape())?;
        let cols = av.cols();
        let data: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, bv.data()[bidx(bc, cols, k)]))
            .collect();
        let value = Tensor::from_vec(av.rows(), cols, data)?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, make(a, b, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product (with row, column, or scalar expansion of `b`).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.nodes[a.0].value.scale(factor);
        let rg = self.rg1(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| x + c);
        let rg = self.rg1(a);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        let rg = self.rg1(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg1(a);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Softmax along each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let (r, c) = src.shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = src.row_slice(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                out.set(i, j, e);
                z += e;
            }
            for j in 0..c {
                out.set(i, j, out.get(i, j) / z);
            }
        }
        let rg = self.rg1(a);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg1(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean of all entries, as `1 × 1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg1(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Column sums: `r × c → 1 × c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(1, t.cols());
        for i in 0..t.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        let rg = self.rg1(a);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Row average: `r × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let r = self.nodes[a.0].value.rows();
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / r as f64)
    }

    /// Row sums: `r × c → r × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let data = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let value = Tensor::from_vec(t.rows(), 1, data).expect("shape");
        let rg = self.rg1(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Cosine similarity of matching rows: `r × c, r × c → r × 1`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err("cosine_rows", av.shape(), bv.shape()));
        }
        let mut data = Vec::with_capacity(av.rows());
        for i in 0..av.rows() {
            let (x, y) = (av.row_slice(i), bv.row_slice(i));
            let (nx, ny) = (norm(x), norm(y));
            if nx == 0.0 || ny == 0.0 {
                return Err(DiffError::ZeroNormRow { op: "cosine_rows", row: i });
            }
            data.push(dot(x, y) / (nx * ny));
        }
        let value = Tensor::from_vec(av.rows(), 1, data)?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, Op::CosineRows(a, b), rg))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = &self.nodes[a.0].value;
        let mut out = t.clone();
        for i in 0..t.rows() {
            let n = norm(t.row_slice(i));
            if n == 0.0 {
                return Err(DiffError::ZeroNormRow { op: "normalize_rows", row: i });
            }
            for j in 0..t.cols() {
                out.set(i, j, t.get(i, j) / n);
            }
        }
        let rg = self.rg1(a);
        Ok(self.push(out, Op::NormalizeRows(a), rg))
    }

    /// Mean smooth-L1 distance over all entries (transition at [`SMOOTH_L1_BETA`]).
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err("smooth_l1", av.shape(), bv.shape()));
        }
        let total: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| smooth_l1(x - y))
            .sum();
        let value = Tensor::scalar(total / av.len() as f64);
        let rg = self.rg2(a, b);
        Ok(self.push(value, Op::SmoothL1(a, b), rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var, DiffError> {
        let t = &self.nodes[a.0].value;
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= t.rows() {
                return Err(DiffError::IndexOutOfRange { index: i, len: t.rows() });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::from_vec(idx.len(), c, data)?;
        let rg = self.rg1(a);
        Ok(self.push(value, Op::GatherRows(a, idx), rg))
    }

    /// `out[idx[k]] += a[k]` for an `n`-row output.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, n: usize) -> Result<Var, DiffError> {
        let t = &self.nodes[a.0].value;
        if idx.len() != t.rows() {
            return Err(shape_err("scatter_add_rows", t.shape(), (idx.len(), 1)));
        }
        let c = t.cols();
        let mut out = Tensor::zeros(n, c);
        for (k, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(DiffError::IndexOutOfRange { index: i, len: n });
            }
            let src = t.row_slice(k);
            for (j, x) in src.iter().enumerate() {
                out.data_mut()[i * c + j] += x;
            }
        }
        let rg = self.rg1(a);
        Ok(self.push(out, Op::ScatterAddRows(a, idx), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av.shape(), bv.shape()));
        }
        let c = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * c);
        for i in 0..av.rows() {
            data.extend_from_slice(av.row_slice(i));
            data.extend_from_slice(bv.row_slice(i));
        }
        let value = Tensor::from_vec(av.rows(), c, data)?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.cols() != bv.cols() {
            return Err(shape_err("concat_rows", av.shape(), bv.shape()));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let value = Tensor::from_vec(av.rows() + bv.rows(), av.cols(), data)?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, Op::ConcatRows(a, b), rg))
    }

    /// Sparse linear map onto a fresh `rows × cols` output.
    pub fn sparse_map(
        &mut self,
        a: Var,
        entries: Rc<Vec<MapEntry>>,
        rows: usize,
        cols: usize,
    ) -> Result<Var, DiffError> {
        let t = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(rows, cols);
        for e in entries.iter() {
            if e.src >= t.len() {
                return Err(DiffError::IndexOutOfRange { index: e.src, len: t.len() });
            }
            if e.dst >= rows * cols {
                return Err(DiffError::IndexOutOfRange { index: e.dst, len: rows * cols });
            }
            out.data_mut()[e.dst] += e.coef * t.data()[e.src];
        }
        let rg = self.rg1(a);
        Ok(self.push(out, Op::SparseMap(a, entries), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let t = &self.nodes[a.0].value;
        if t.len() != rows * cols {
            return Err(shape_err("reshape", t.shape(), (rows, cols)));
        }
        let value = Tensor::from_vec(rows, cols, t.data().to_vec())?;
        let rg = self.rg1(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Backward sweep from a scalar output with seed 1.
    pub fn backward(&self, out: Var) -> Gradients {
        let seed = Tensor::filled(self.shape(out).0, self.shape(out).1, 1.0);
        self.backward_with(&[(out, seed)])
    }

    /// Backward sweep from arbitrary seeded outputs.
    pub fn backward_with(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut start = 0;
        for (v, g) in seeds {
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            debug_assert_eq!(self.shape(*v), g.shape());
            accumulate(&mut grads, *v, g.clone());
            start = start.max(v.0 + 1);
        }
        for i in (0..start).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    let mut gb = reduce_bcast(g, *bc, self.val(*b).shape());
                    if sign < 0.0 {
                        gb = gb.scale(-1.0);
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let cols = av.cols();
                if self.wants(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, gk)| gk * bv.data()[bidx(*bc, cols, k)])
                        .collect();
                    accumulate(grads, *a, Tensor::from_vec(av.rows(), cols, data).expect("shape"));
                }
                if self.wants(*b) {
                    let prod = Tensor::from_vec(
                        av.rows(),
                        cols,
                        g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect(),
                    )
                    .expect("shape");
                    accumulate(grads, *b, reduce_bcast(&prod, *bc, bv.shape()));
                }
            }
            Op::Scale(a, f) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.scale(*f));
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if self.wants(*a) {
                    let s = self.val(*a).shape();
                    let gg = Tensor::from_vec(s.0, s.1, g.data().to_vec()).expect("shape");
                    accumulate(grads, *a, gg);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    matmul_nt_into(g, bv, &mut ga);
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    matmul_tn_into(av, g, &mut gb);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.transpose());
                }
            }
            Op::RowSoftmax(a) => {
                if self.wants(*a) {
                    let (r, c) = y.shape();
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        let dotgy = dot(g.row_slice(row), y.row_slice(row));
                        for j in 0..c {
                            ga.set(row, j, y.get(row, j) * (g.get(row, j) - dotgy));
                        }
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::Sigmoid(a) => self.unary_back(*a, g, grads, |_, yv| yv * (1.0 - yv), y),
            Op::Tanh(a) => self.unary_back(*a, g, grads, |_, yv| 1.0 - yv * yv, y),
            Op::Sin(a) => self.unary_back(*a, g, grads, |x, _| x.cos(), y),
            Op::Cos(a) => self.unary_back(*a, g, grads, |x, _| -x.sin(), y),
            Op::Exp(a) => self.unary_back(*a, g, grads, |_, yv| yv, y),
            Op::Log(a) => self.unary_back(*a, g, grads, |x, _| 1.0 / x, y),
            Op::Abs(a) => self.unary_back(*a, g, grads, sign, y),
            Op::Square(a) => self.unary_back(*a, g, grads, |x, _| 2.0 * x, y),
            Op::Softplus(a) => self.unary_back(*a, g, grads, |x, _| sigmoid(x), y),
            Op::Sum(a) | Op::Mean(a) => {
                if self.wants(*a) {
                    let s = self.val(*a).shape();
                    let mut gv = g.item();
                    if matches!(self.nodes[i].op, Op::Mean(_)) {
                        gv /= (s.0 * s.1) as f64;
                    }
                    accumulate(grads, *a, Tensor::filled(s.0, s.1, gv));
                }
            }
            Op::SumRows(a) => {
                if self.wants(*a) {
                    let (r, c) = self.val(*a).shape();
                    let ga = Tensor::from_fn(r, c, |_, j| g.data()[j]);
                    accumulate(grads, *a, ga);
                }
            }
            Op::SumCols(a) => {
                if self.wants(*a) {
                    let (r, c) = self.val(*a).shape();
                    let ga = Tensor::from_fn(r, c, |row, _| g.data()[row]);
                    accumulate(grads, *a, ga);
                }
            }
            Op::CosineRows(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (r, c) = av.shape();
                let mut ga = Tensor::zeros(r, c);
                let mut gb = Tensor::zeros(r, c);
                for row in 0..r {
                    let (x, z) = (av.row_slice(row), bv.row_slice(row));
                    let (nx, nz) = (norm(x), norm(z));
                    let cosv = y.data()[row];
                    let gr = g.data()[row];
                    for j in 0..c {
                        ga.set(row, j, gr * (z[j] / (nx * nz) - cosv * x[j] / (nx * nx)));
                        gb.set(row, j, gr * (x[j] / (nx * nz) - cosv * z[j] / (nz * nz)));
                    }
                }
                if self.wants(*a) {
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::NormalizeRows(a) => {
                if self.wants(*a) {
                    let av = self.val(*a);
                    let (r, c) = av.shape();
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        let n = norm(av.row_slice(row));
                        let gy = dot(g.row_slice(row), y.row_slice(row));
                        for j in 0..c {
                            ga.set(row, j, (g.get(row, j) - y.get(row, j) * gy) / n);
                        }
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::SmoothL1(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let scale = g.item() / av.len() as f64;
                let data: Vec<f64> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, z)| scale * smooth_l1_grad(x - z))
                    .collect();
                let ga = Tensor::from_vec(av.rows(), av.cols(), data).expect("shape");
                if self.wants(*b) {
                    accumulate(grads, *b, ga.scale(-1.0));
                }
                if self.wants(*a) {
                    accumulate(grads, *a, ga);
                }
            }
            Op::GatherRows(a, idx) => {
                if self.wants(*a) {
                    let (r, c) = self.val(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga.data_mut()[src * c + j] += g.get(k, j);
                        }
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::ScatterAddRows(a, idx) => {
                if self.wants(*a) {
                    let (r, c) = self.val(*a).shape();
                    let mut data = Vec::with_capacity(r * c);
                    for &dst in idx.iter() {
                        data.extend_from_slice(g.row_slice(dst));
                    }
                    accumulate(grads, *a, Tensor::from_vec(r, c, data).expect("shape"));
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.val(*a).cols();
                let cb = self.val(*b).cols();
                let r = g.rows();
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::from_fn(r, ca, |i, j| g.get(i, j)));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::from_fn(r, cb, |i, j| g.get(i, ca + j)));
                }
            }
            Op::ConcatRows(a, b) => {
                let ra = self.val(*a).rows();
                let rb = self.val(*b).rows();
                let c = g.cols();
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::from_fn(ra, c, |i, j| g.get(i, j)));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::from_fn(rb, c, |i, j| g.get(ra + i, j)));
                }
            }
            Op::SparseMap(a, entries) => {
                if self.wants(*a) {
                    let (r, c) = self.val(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for e in entries.iter() {
                        ga.data_mut()[e.src] += e.coef * g.data()[e.dst];
                    }
                    accumulate(grads, *a, ga);
                }
            }
        }
    }

    fn unary_back(
        &self,
        a: Var,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        d: impl Fn(f64, f64) -> f64,
        y: &Tensor,
    ) {
        if !self.wants(a) {
            return;
        }
        let x = self.val(a);
        let data = g
            .data()
            .iter()
            .zip(x.data())
            .zip(y.data())
            .map(|((gk, xk), yk)| gk * d(*xk, *yk))
            .collect();
        accumulate(grads, a, Tensor::from_vec(x.rows(), x.cols(), data).expect("shape"));
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reduce_bcast(g: &Tensor, bc: Bcast, shape: (usize, usize)) -> Tensor {
    match bc {
        Bcast::Same => g.clone(),
        Bcast::Scalar => Tensor::scalar(g.sum()),
        Bcast::Row => {
            let mut out = Tensor::zeros(1, shape.1);
            for i in 0..g.rows() {
                for (o, x) in out.data_mut().iter_mut().zip(g.row_slice(i)) {
                    *o += x;
                }
            }
            out
        }
        Bcast::Col => {
            let data = (0..g.rows()).map(|i| g.row_slice(i).iter().sum()).collect();
            Tensor::from_vec(shape.0, 1, data).expect("shape")
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[inline]
fn sign(x: f64, _y: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * d * d / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

#[inline]
fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < SMOOTH_L1_BETA {
        d / SMOOTH_L1_BETA
    } else {
        d.signum()
    }
}
