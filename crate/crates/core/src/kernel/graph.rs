//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the [`Graph`] holding its forward value
//! and the ids of its inputs. Because nodes can only reference earlier nodes,
//! insertion order is already a topological order and [`Graph::backward`]
//! is a single reverse sweep.
//!
//! Values are matrices (see [`Tensor::dims2`]). Leaves are either trainable
//! parameters, which receive gradients, or constants, which do not. Gradient
//! work is skipped for any node that does not depend on a parameter.

use super::tensor::{gemm, Operand};
use super::{KernelError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    /// Fused LSTM state update; keeps the activated gates for backward.
    LstmState {
        gates: Var,
        c_prev: Var,
        acts: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. One graph per forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zero when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Moves the gradient out, leaving a zero in its place on later reads.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> KernelError {
    KernelError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl Graph {
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape("add", a, b)?;
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape("sub", a, b)?;
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape("mul", a, b)?;
        let value = zip(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, KernelError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (rows, cols) = ta.dims2();
        if tr.len() != cols {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for r in 0..rows {
            for (v, b) in data[r * cols..(r + 1) * cols].iter_mut().zip(tr.data()) {
                *v += b;
            }
        }
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = map(self.value(a), sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    /// Natural log; the input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, KernelError> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(KernelError::Domain(format!("log of {v}")));
        }
        let value = map(self.value(a), f64::ln);
        let ng = self.needs(a);
        Ok(self.push(value, Op::Log(a), ng))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| x * x);
        let ng = self.needs(a);
        self.push(value, Op::Square(a), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = map(self.value(a), |x| x * k);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = map(self.value(a), |x| x + k);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = map(self.value(a), |x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    /// Fused LSTM update. `gates` holds the `batch × 4·hidden`
    /// pre-activations in `i, f, g, o` order and `c_prev` is
    /// `batch × hidden`. The result is `[h | c]`, `batch × 2·hidden`.
    pub fn lstm_state(&mut self, gates: Var, c_prev: Var) -> Result<Var, KernelError> {
        let (tg, tc) = (self.value(gates), self.value(c_prev));
        let (batch, hidden) = tc.dims2();
        if tg.dims2() != (batch, 4 * hidden) {
            return Err(shape_err("lstm_state", tg, tc));
        }
        let mut acts = Vec::with_capacity(batch * 4 * hidden);
        let mut out = vec![0.0; batch * 2 * hidden];
        for r in 0..batch {
            let pre = &tg.data()[r * 4 * hidden..(r + 1) * 4 * hidden];
            let base = acts.len();
            acts.extend(pre[..2 * hidden].iter().map(|&x| sigmoid(x)));
            acts.extend(pre[2 * hidden..3 * hidden].iter().map(|&x| x.tanh()));
            acts.extend(pre[3 * hidden..].iter().map(|&x| sigmoid(x)));
            let a = &acts[base..];
            let cp = &tc.data()[r * hidden..(r + 1) * hidden];
            let row = &mut out[r * 2 * hidden..(r + 1) * 2 * hidden];
            for j in 0..hidden {
                let c = a[hidden + j] * cp[j] + a[j] * a[2 * hidden + j];
                row[hidden + j] = c;
                row[j] = a[3 * hidden + j] * c.tanh();
            }
        }
        let ng = self.needs(gates) || self.needs(c_prev);
        let acts = Tensor::from_parts(vec![batch, 4 * hidden], acts);
        let value = Tensor::from_parts(vec![batch, 2 * hidden], out);
        Ok(self.push(value, Op::LstmState { gates, c_prev, acts }, ng))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, KernelError> {
        let ta = self.value(a);
        let (rows, cols) = ta.dims2();
        if start > end || end > cols {
            return Err(KernelError::Shape {
                op: "slice_cols",
                left: ta.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * cols + start..r * cols + end]);
        }
        let value = Tensor::from_parts(vec![rows, w], data);
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceCols(a, start, end), ng))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, KernelError> {
        let ta = self.value(a);
        let (rows, cols) = ta.dims2();
        if start > end || end > rows {
            return Err(KernelError::Shape {
                op: "slice_rows",
                left: ta.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let data = ta.data()[start * cols..end * cols].to_vec();
        let value = Tensor::from_parts(vec![end - start, cols], data);
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceRows(a, start, end), ng))
    }

    /// Side-by-side concatenation; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let first = parts.first().ok_or_else(|| {
            KernelError::InvalidArgument("concat_cols of zero parts".into())
        })?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::from_parts(vec![rows, total], data);
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical stacking; all parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let first = parts.first().ok_or_else(|| {
            KernelError::InvalidArgument("concat_rows of zero parts".into())
        })?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_parts(vec![rows, cols], data);
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, KernelError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(KernelError::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if !self.needs(loss) {
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2();
                    let (_, nn) = tb.dims2();
                    if self.needs(*a) {
                        // dA = dY · Bᵀ
                        let g = slot(&mut grads, *a, ta.shape());
                        gemm(
                            Operand::plain(dy.data(), m, nn),
                            Operand::transposed(tb.data(), k, nn),
                            g.data_mut(),
                            1.0,
                        );
                    }
                    if self.needs(*b) {
                        // dB = Aᵀ · dY
                        let g = slot(&mut grads, *b, tb.shape());
                        gemm(
                            Operand::transposed(ta.data(), m, k),
                            Operand::plain(dy.data(), m, nn),
                            g.data_mut(),
                            1.0,
                        );
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, dy.data(), 1.0);
                    self.accumulate(&mut grads, *b, dy.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, dy.data(), 1.0);
                    self.accumulate(&mut grads, *b, dy.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let d = zip(&dy, self.value(*b), |g, y| g * y);
                        self.accumulate(&mut grads, *a, d.data(), 1.0);
                    }
                    if self.needs(*b) {
                        let d = zip(&dy, self.value(*a), |g, x| g * x);
                        self.accumulate(&mut grads, *b, d.data(), 1.0);
                    }
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut grads, *a, dy.data(), 1.0);
                    if self.needs(*row) {
                        let (rows, cols) = dy.dims2();
                        let g = slot(&mut grads, *row, self.value(*row).shape());
                        for r in 0..rows {
                            for (acc, d) in g.data_mut().iter_mut().zip(&dy.data()[r * cols..(r + 1) * cols]) {
                                *acc += d;
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let d = zip(&dy, &node.value, |g, s| g * s * (1.0 - s));
                    self.accumulate(&mut grads, *a, d.data(), 1.0);
                }
                Op::Tanh(a) => {
                    let d = zip(&dy, &node.value, |g, t| g * (1.0 - t * t));
                    self.accumulate(&mut grads, *a, d.data(), 1.0);
                }
                Op::Log(a) => {
                    let d = zip(&dy, self.value(*a), |g, x| g / x);
                    self.accumulate(&mut grads, *a, d.data(), 1.0);
                }
                Op::Square(a) => {
                    let d = zip(&dy, self.value(*a), |g, x| 2.0 * g * x);
                    self.accumulate(&mut grads, *a, d.data(), 1.0);
                }
                Op::Scale(a, k) => self.accumulate(&mut grads, *a, dy.data(), *k),
                Op::AddScalar(a) => self.accumulate(&mut grads, *a, dy.data(), 1.0),
                Op::Clamp(a, lo, hi) => {
                    let d = zip(&dy, self.value(*a), |g, x| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(&mut grads, *a, d.data(), 1.0);
                }
                Op::SliceCols(a, start, end) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let (rows, cols) = ta.dims2();
                        let w = end - start;
                        let g = slot(&mut grads, *a, ta.shape());
                        let gd = g.data_mut();
                        for r in 0..rows {
                            for (acc, d) in gd[r * cols + start..r * cols + end]
                                .iter_mut()
                                .zip(&dy.data()[r * w..(r + 1) * w])
                            {
                                *acc += d;
                            }
                        }
                    }
                }
                Op::SliceRows(a, start, end) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let cols = ta.cols();
                        let g = slot(&mut grads, *a, ta.shape());
                        for (acc, d) in g.data_mut()[start * cols..end * cols].iter_mut().zip(dy.data()) {
                            *acc += d;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = dy.dims2();
                    let mut offset = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let w = tp.cols();
                        if self.needs(*p) {
                            let g = slot(&mut grads, *p, tp.shape());
                            let gd = g.data_mut();
                            for r in 0..rows {
                                for (acc, d) in gd[r * w..(r + 1) * w]
                                    .iter_mut()
                                    .zip(&dy.data()[r * total + offset..r * total + offset + w])
                                {
                                    *acc += d;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        self.accumulate(&mut grads, *p, &dy.data()[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::Sum(a) => {
                    let g = dy.data()[0];
                    let ta = self.value(*a);
                    self.accumulate(&mut grads, *a, &vec![g; ta.len()], 1.0);
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    let g = dy.data()[0] / ta.len().max(1) as f64;
                    self.accumulate(&mut grads, *a, &vec![g; ta.len()], 1.0);
                }
                Op::LstmState { gates, c_prev, acts } => {
                    let cp = self.value(*c_prev);
                    let (batch, hidden) = cp.dims2();
                    let mut d_gates = vec![0.0; batch * 4 * hidden];
                    let mut d_cprev = vec![0.0; batch * hidden];
                    for r in 0..batch {
                        let a = &acts.data()[r * 4 * hidden..(r + 1) * 4 * hidden];
                        let y = &node.value.data()[r * 2 * hidden..(r + 1) * 2 * hidden];
                        let d = &dy.data()[r * 2 * hidden..(r + 1) * 2 * hidden];
                        let c_old = &cp.data()[r * hidden..(r + 1) * hidden];
                        let dg = &mut d_gates[r * 4 * hidden..(r + 1) * 4 * hidden];
                        for j in 0..hidden {
                            let (i, f, gg, o) = (a[j], a[hidden + j], a[2 * hidden + j], a[3 * hidden + j]);
                            let tc = y[hidden + j].tanh();
                            let dh = d[j];
                            let dc = d[hidden + j] + dh * o * (1.0 - tc * tc);
                            dg[j] = dc * gg * i * (1.0 - i);
                            dg[hidden + j] = dc * c_old[j] * f * (1.0 - f);
                            dg[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                            dg[3 * hidden + j] = dh * tc * o * (1.0 - o);
                            d_cprev[r * hidden + j] = dc * f;
                        }
                    }
                    self.accumulate(&mut grads, *gates, &d_gates, 1.0);
                    self.accumulate(&mut grads, *c_prev, &d_cprev, 1.0);
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, d: &[f64], k: f64) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (acc, x) in g.data_mut().iter_mut().zip(d) {
                    *acc += k * x;
                }
            }
            empty => {
                let data = d.iter().map(|x| k * x).collect();
                *empty = Some(Tensor::from_parts(self.value(v).shape().to_vec(), data));
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}
