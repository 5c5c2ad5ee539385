//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! Every value is a row-major `rows x cols` matrix of `f64`; vectors are
//! single rows. A [`Tape`] records each primitive as it is evaluated and
//! [`Tape::backward`] walks the record in reverse to accumulate gradients.
//! Shapes must match exactly: the only broadcast is multiplication by a
//! scalar constant.

use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]{:?}", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "tensor",
                shapes: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equal-length rows; an empty slice gives a `0 x cols` tensor.
    pub fn from_rows(rows: &[&[f64]], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    shapes: format!("row of length {} in {cols}-column tensor", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * other`
    fn matmul(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor { rows: n, cols: m, data: out }
    }

    /// `self * other^T`
    fn matmul_bt(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        Tensor { rows: n, cols: m, data: out }
    }

    /// `self^T * other`
    fn matmul_at(&self, other: &Tensor) -> Tensor {
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let brow = &other.data[p * m..(p + 1) * m];
            for i in 0..n {
                let a = self.data[p * n + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor { rows: n, cols: m, data: out }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    /// Elementwise map with precomputed local derivative.
    Elementwise(Var, Tensor),
    Sum(Var),
    MeanRows(Var),
    RowSums(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[Vec<usize>]>),
    SoftmaxRows(Var),
    ScaleRows(Var, Var),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Topologically ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, shapes: &[(usize, usize)]) -> Error {
    let s: Vec<String> = shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
    Error::Shape {
        op,
        shapes: s.join(", "),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass; zeros if `v` is not on a path to
    /// the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad.clone().unwrap_or_else(|| Tensor::zeros(node.value.rows, node.value.cols))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, &[sa, sb]));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let value = self.value(a).matmul(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`; applies a `out x in` weight matrix to row vectors.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_bt", &[sa, sb]));
        }
        let value = self.value(a).matmul_bt(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMulBt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::LeakyRelu(a), |x| if x > 0.0 { x } else { LEAKY_RELU_SLOPE * x })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    /// Elementwise `f` whose derivative is supplied by `df`.
    pub fn elementwise(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let x = &self.nodes[a.0].value;
        let value = x.map(&f);
        let deriv = x.map(&df);
        let rg = self.needs(&[a]);
        self.push(value, Op::Elementwise(a, deriv), rg)
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column means of an `n x d` tensor as `1 x d`; zeros when `n == 0`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols];
        for r in 0..t.rows {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        if t.rows > 0 {
            let n = t.rows as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        let cols = t.cols;
        let rg = self.needs(&[a]);
        self.push(Tensor { rows: 1, cols, data: out }, Op::MeanRows(a), rg)
    }

    /// Per-row sums of an `n x d` tensor as `n x 1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows).map(|r| t.row_slice(r).iter().sum()).collect();
        let rows = t.rows;
        let rg = self.needs(&[a]);
        self.push(Tensor { rows, cols: 1, data }, Op::RowSums(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p).1).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols != cols {
                let shapes: Vec<_> = parts.iter().map(|&q| self.shape(q)).collect();
                return Err(shape_err("concat_rows", &shapes));
            }
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            let shapes: Vec<_> = parts.iter().map(|&q| self.shape(q)).collect();
            return Err(shape_err("concat_cols", &shapes));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor { rows, cols, data }, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols {
            return Err(shape_err("slice_cols", &[t.shape(), (start, len)]));
        }
        let mut data = Vec::with_capacity(t.rows * len);
        for r in 0..t.rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let rows = t.rows;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor { rows, cols: len, data }, Op::SliceCols(a, start), rg))
    }

    /// Row `i` of the output is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: impl Into<Rc<[usize]>>) -> Result<Var> {
        let indices: Rc<[usize]> = indices.into();
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows) {
            return Err(shape_err("gather_rows", &[t.shape(), (bad, 0)]));
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols);
        for &i in indices.iter() {
            data.extend_from_slice(t.row_slice(i));
        }
        let (rows, cols) = (indices.len(), t.cols);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor { rows, cols, data }, Op::GatherRows(a, indices), rg))
    }

    /// Row `i` of the output is the mean of the rows of `a` listed in
    /// `segments[i]`; an empty segment gives a zero row.
    pub fn segment_mean(&mut self, a: Var, segments: impl Into<Rc<[Vec<usize>]>>) -> Result<Var> {
        let segments: Rc<[Vec<usize>]> = segments.into();
        let t = self.value(a);
        let cols = t.cols;
        let mut data = vec![0.0; segments.len() * cols];
        for (i, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            let out = &mut data[i * cols..(i + 1) * cols];
            for &j in seg {
                if j >= t.rows {
                    return Err(shape_err("segment_mean", &[t.shape(), (j, 0)]));
                }
                for (o, v) in out.iter_mut().zip(t.row_slice(j)) {
                    *o += v;
                }
            }
            let n = seg.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        let rows = segments.len();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor { rows, cols, data }, Op::SegmentMean(a, segments), rg))
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows {
            let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.needs(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Multiplies row `r` of `m` by the scalar `col[r]` (`col` is `n x 1`).
    pub fn scale_rows(&mut self, m: Var, col: Var) -> Result<Var> {
        let (sm, sc) = (self.shape(m), self.shape(col));
        if sc != (sm.0, 1) {
            return Err(shape_err("scale_rows", &[sm, sc]));
        }
        let (t, c) = (self.value(m), self.value(col));
        let mut data = t.data.clone();
        for r in 0..t.rows {
            let s = c.data[r];
            data[r * t.cols..(r + 1) * t.cols].iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.needs(&[m, col]);
        Ok(self.push(Tensor { rows: sm.0, cols: sm.1, data }, Op::ScaleRows(m, col), rg))
    }

    /// Accumulates `d loss / d v` for every recorded value that requires a
    /// gradient. Gradients of earlier passes are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_vjp(i, &g);
            self.nodes[i].grad = Some(g);
            for (parent, contrib) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[parent.0].grad {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn local_vjp(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, g.matmul_bt(val(*b))));
                }
                if wants(*b) {
                    out.push((*b, val(*a).matmul_at(g)));
                }
                out
            }
            Op::MatMulBt(a, b) => {
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, g.matmul(val(*b))));
                }
                if wants(*b) {
                    out.push((*b, g.matmul_at(val(*a))));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![(*a, g.zip(val(*b), |x, y| x * y)), (*b, g.zip(val(*a), |x, y| x * y))],
            Op::Scale(a, s) => vec![(*a, g.map(|v| s * v))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Sigmoid(a) => vec![(*a, g.zip(y, |gv, yv| gv * yv * (1.0 - yv)))],
            Op::Tanh(a) => vec![(*a, g.zip(y, |gv, yv| gv * (1.0 - yv * yv)))],
            Op::Relu(a) => vec![(*a, g.zip(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }))],
            Op::LeakyRelu(a) => vec![(
                *a,
                g.zip(val(*a), |gv, x| if x > 0.0 { gv } else { LEAKY_RELU_SLOPE * gv }),
            )],
            Op::Exp(a) => vec![(*a, g.zip(y, |gv, yv| gv * yv))],
            Op::Log(a) => vec![(*a, g.zip(val(*a), |gv, x| gv / x))],
            Op::LogSigmoid(a) => vec![(*a, g.zip(val(*a), |gv, x| gv * sigmoid(-x)))],
            Op::Elementwise(a, d) => vec![(*a, g.zip(d, |gv, dv| gv * dv))],
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.item()))]
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                if r > 0 {
                    let n = r as f64;
                    for row in 0..r {
                        for col in 0..c {
                            out.data[row * c + col] = g.data[col] / n;
                        }
                    }
                }
                vec![(*a, out)]
            }
            Op::RowSums(a) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for row in 0..r {
                    out.data[row * c..(row + 1) * c].iter_mut().for_each(|v| *v = g.data[row]);
                }
                vec![(*a, out)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let (r, c) = val(p).shape();
                        let data = g.data[offset * c..(offset + r) * c].to_vec();
                        offset += r;
                        (p, Tensor { rows: r, cols: c, data })
                    })
                    .collect()
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let (r, c) = val(p).shape();
                        let mut data = Vec::with_capacity(r * c);
                        for row in 0..r {
                            data.extend_from_slice(&g.row_slice(row)[offset..offset + c]);
                        }
                        offset += c;
                        (p, Tensor { rows: r, cols: c, data })
                    })
                    .collect()
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for row in 0..r {
                    out.data[row * c + start..row * c + start + g.cols].copy_from_slice(g.row_slice(row));
                }
                vec![(*a, out)]
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for (i, &src) in indices.iter().enumerate() {
                    for (o, v) in out.data[src * c..(src + 1) * c].iter_mut().zip(g.row_slice(i)) {
                        *o += v;
                    }
                }
                vec![(*a, out)]
            }
            Op::SegmentMean(a, segments) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for (i, seg) in segments.iter().enumerate() {
                    let n = seg.len() as f64;
                    for &j in seg {
                        for (o, v) in out.data[j * c..(j + 1) * c].iter_mut().zip(g.row_slice(i)) {
                            *o += v / n;
                        }
                    }
                }
                vec![(*a, out)]
            }
            Op::SoftmaxRows(a) => {
                let mut out = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        out.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                vec![(*a, out)]
            }
            Op::ScaleRows(m, col) => {
                let (mv, cv) = (val(*m), val(*col));
                let mut dm = g.clone();
                let mut dc = Tensor::zeros(cv.rows, 1);
                for r in 0..mv.rows {
                    let s = cv.data[r];
                    dm.data[r * mv.cols..(r + 1) * mv.cols].iter_mut().for_each(|v| *v *= s);
                    dc.data[r] = g.row_slice(r).iter().zip(mv.row_slice(r)).map(|(a, b)| a * b).sum();
                }
                vec![(*m, dm), (*col, dc)]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of `f` at `params` with central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps`, coordinate by coordinate. The
/// relative error of each coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();
    if let Some(bad) = analytic.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite analytic gradient {bad:?}")));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work = params.to_vec();
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data[k];
            work[p].data[k] = orig + eps;
            let plus = eval(&work)?;
            work[p].data[k] = orig - eps;
            let minus = eval(&work)?;
            work[p].data[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (p, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_and_shapes() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(3, 1));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), (2, 1));
        let err = tape.matmul(b, b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }), "{err}");
        assert!(err.to_string().contains("3x1, 3x1"));
    }

    #[test]
    fn tanh_matches_series_oracle() {
        // tanh(x) = (e^{2x} - 1) / (e^{2x} + 1), e^y by Taylor series
        fn exp_series(y: f64) -> f64 {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..60 {
                term *= y / k as f64;
                sum += term;
            }
            sum
        }
        let x = 1.8808;
        let e = exp_series(2.0 * x);
        let oracle = (e - 1.0) / (e + 1.0);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(x));
        let t = tape.tanh(v);
        assert!((tape.value(t).item() - oracle).abs() < 1e-12);
        // four-digit rounding of the quoted value 0.95459
        assert!((oracle - 0.95459).abs() < 5e-5);
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, -2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), Tensor::row(&[2.0, -4.0]));

        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0));
        let x = tape.constant(Tensor::scalar(1.0));
        let wx = tape.mul(w, x).unwrap();
        let s = tape.sigmoid(wx);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).item(), 0.25);
    }

    #[test]
    fn off_path_nodes_have_zero_grad_and_nonscalar_loss_fails() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        let unused = tape.param(Tensor::row(&[3.0]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused), Tensor::row(&[0.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    /// Exercises every primitive in one composite.
    fn composite(tape: &mut Tape, p: &[Var]) -> Result<Var> {
        let (x, w, v, a) = (p[0], p[1], p[2], p[3]);
        let h1 = tape.matmul_bt(x, w)?; // 4x3
        let h1 = tape.tanh(h1);
        let h2 = tape.matmul(h1, v)?; // 4x3
        let s = tape.sigmoid(h2);
        let lr = tape.leaky_relu(h1);
        let m = tape.mul(s, lr)?;
        let d = tape.sub(m, h1)?;
        let r = tape.relu(d);
        let e = tape.exp(h2);
        let sum_e = tape.add(e, r)?;
        let l = tape.log(sum_e);
        let seg = tape.segment_mean(l, vec![vec![0, 1], vec![], vec![2, 3, 3]])?;
        let g = tape.gather_rows(seg, vec![2, 0, 0])?;
        let c = tape.concat_rows(&[g, seg])?; // 6x3
        let cc = tape.concat_cols(&[c, c])?; // 6x6
        let sl = tape.slice_cols(cc, 2, 3)?; // 6x3
        let sm = tape.softmax_rows(sl);
        let rs = tape.row_sums(h2); // 4x1
        let rs6 = tape.gather_rows(rs, vec![0, 1, 2, 3, 0, 1])?;
        let sr = tape.scale_rows(sm, rs6)?;
        let mr = tape.mean_rows(sr); // 1x3
        let at = tape.matmul_bt(mr, a)?; // 1x1
        let ls = tape.log_sigmoid(at);
        let sc = tape.scale(ls, -1.5);
        let sc = tape.add_scalar(sc, 0.3);
        let om = tape.one_minus(sc);
        let t = tape.sum(h1);
        let t = tape.scale(t, 0.1);
        tape.add(om, t)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let params = vec![
                rand_tensor(&mut rng, 4, 2),
                rand_tensor(&mut rng, 3, 2),
                rand_tensor(&mut rng, 3, 3),
                rand_tensor(&mut rng, 1, 3),
            ];
            let report = grad_check(&params, 1e-5, composite).unwrap();
            assert!(report.max_relative_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let params = vec![Tensor::row(&[0.3, -1.2, 2.0])];
        let report = grad_check(&params, 1e-5, |tape, p| {
            let sq = tape.mul(p[0], p[0])?;
            let s = tape.scale(sq, 3.0);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        let params = vec![Tensor::row(&[0.3, -0.7])];
        let report = grad_check(&params, 1e-5, |tape, p| {
            // tanh forward with the sigmoid derivative
            let t = tape.elementwise(p[0], f64::tanh, |x| sigmoid(x) * (1.0 - sigmoid(x)));
            Ok(tape.sum(t))
        })
        .unwrap();
        assert!(report.max_relative_error > 1e-2, "{report:?}");
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let params = [
            rand_tensor(&mut rng, 4, 2),
            rand_tensor(&mut rng, 3, 2),
            rand_tensor(&mut rng, 3, 3),
            rand_tensor(&mut rng, 1, 3),
        ];
        let grads_of = |which: u8| {
            let mut tape = Tape::new();
            let p: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
            let l1 = composite(&mut tape, &p).unwrap();
            let sq = tape.mul(p[1], p[1]).unwrap();
            let l2 = tape.sum(sq);
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => {
                    let a = tape.scale(l1, 2.0);
                    let b = tape.scale(l2, -3.0);
                    tape.add(a, b).unwrap()
                }
            };
            tape.backward(loss).unwrap();
            p.iter().map(|&v| tape.grad(v)).collect::<Vec<_>>()
        };
        let (g1, g2, g) = (grads_of(1), grads_of(2), grads_of(0));
        for i in 0..params.len() {
            for k in 0..g[i].len() {
                let expect = 2.0 * g1[i].data()[k] - 3.0 * g2[i].data()[k];
                assert!((g[i].data()[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn replay_is_bitwise_reproducible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let params = [
            rand_tensor(&mut rng, 4, 2),
            rand_tensor(&mut rng, 3, 2),
            rand_tensor(&mut rng, 3, 3),
            rand_tensor(&mut rng, 1, 3),
        ];
        let run = || {
            let mut tape = Tape::new();
            let p: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
            let loss = composite(&mut tape, &p).unwrap();
            tape.backward(loss).unwrap();
            let mut bits = vec![tape.value(loss).item().to_bits()];
            for &v in &p {
                bits.extend(tape.grad(v).data().iter().map(|x| x.to_bits()));
            }
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_sigmoid(-800.0), -800.0);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }
}
