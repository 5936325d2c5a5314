//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables in creation
//! order. [`Graph::backward`] walks the tape in reverse, so a node's gradient
//! is complete before it is propagated to its inputs.

use std::cell::RefCell;
use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Elu,
    Relu,
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Square,
    Sqrt,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Elu => "elu",
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
        }
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

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Backward closure of a custom op: maps the upstream gradient of the op's
/// output to one gradient per input.
pub type CustomBackward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Var, Var),
    PairwiseSqDist(Var, Var),
    Custom(Vec<Var>, CustomBackward),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording graph for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Graph::backward`], keyed by variable.
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
    shapes: HashMap<usize, (usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(&v.0) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes.get(&v.0).copied().unwrap_or((1, 1));
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<T>(&self, v: Var, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.with_value(v, |t| (t.rows(), t.cols()))
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&self, v: Var) -> Result<Var> {
        let value = self.value(v);
        self.constant(value)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.matmul(&nodes[b.0].value)?
        };
        self.push(out, Op::MatMul(a, b), self.rg(&[a, b]), "matmul")
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if !x.same_shape(y) {
                return Err(Error::shape(
                    name,
                    format!("{:?} vs {:?}", x.shape(), y.shape()),
                ));
            }
            x.zip_map(y, f)
        };
        self.push(out, op, self.rg(&[a, b]), name)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `a + row` with a `1×m` row broadcast over the rows of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, r) = (&nodes[a.0].value, &nodes[row.0].value);
            if r.rows() != 1 || r.cols() != x.cols() {
                return Err(Error::shape(
                    "add_row",
                    format!("{:?} + {:?}", x.shape(), r.shape()),
                ));
            }
            let c = x.cols();
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += r.data()[i % c];
            }
            out
        };
        self.push(out, Op::AddRow(a, row), self.rg(&[a, row]), "add_row")
    }

    /// `a + col` with an `n×1` column broadcast over the columns of `a`.
    pub fn add_col(&self, a: Var, col: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, k) = (&nodes[a.0].value, &nodes[col.0].value);
            if k.cols() != 1 || k.rows() != x.rows() {
                return Err(Error::shape(
                    "add_col",
                    format!("{:?} + {:?}", x.shape(), k.shape()),
                ));
            }
            let c = x.cols();
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += k.data()[i / c];
            }
            out
        };
        self.push(out, Op::AddCol(a, col), self.rg(&[a, col]), "add_col")
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&self, a: Var, col: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, k) = (&nodes[a.0].value, &nodes[col.0].value);
            if k.cols() != 1 || k.rows() != x.rows() {
                return Err(Error::shape(
                    "mul_col",
                    format!("{:?} * {:?}", x.shape(), k.shape()),
                ));
            }
            let c = x.cols();
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v *= k.data()[i / c];
            }
            out
        };
        self.push(out, Op::MulCol(a, col), self.rg(&[a, col]), "mul_col")
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let out = self.with_value(a, |x| x.map(|v| v * s));
        self.push(out, Op::Scale(a, s), self.rg(&[a]), "scale")
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Result<Var> {
        let out = self.with_value(a, |x| x.map(|v| v + s));
        self.push(out, Op::AddScalar(a), self.rg(&[a]), "add_scalar")
    }

    pub fn unary(&self, a: Var, kind: Unary) -> Result<Var> {
        let out = self.with_value(a, |x| x.map(|v| kind.apply(v)));
        self.push(out, Op::Unary(a, kind), self.rg(&[a]), kind.name())
    }

    pub fn elu(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Elu)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Ln)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.with_value(a, Tensor::sum));
        self.push(out, Op::Sum(a), self.rg(&[a]), "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |x| {
            if x.is_empty() {
                Err(Error::shape("mean", "empty tensor"))
            } else {
                Ok(Tensor::scalar(x.mean()))
            }
        })?;
        self.push(out, Op::Mean(a), self.rg(&[a]), "mean")
    }

    /// Column means, `n×m → 1×m`.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |x| {
            if x.rows() == 0 {
                Err(Error::shape("mean_rows", "no rows"))
            } else {
                Ok(x.mean_rows())
            }
        })?;
        self.push(out, Op::MeanRows(a), self.rg(&[a]), "mean_rows")
    }

    /// Row sums, `n×m → n×1`.
    pub fn sum_cols(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |x| {
            let data = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
            Tensor::from_rows(x.rows(), 1, data)
        })?;
        self.push(out, Op::SumCols(a), self.rg(&[a]), "sum_cols")
    }

    /// Row-wise log-sum-exp, `n×m → n×1`.
    pub fn logsumexp_rows(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |x| {
            let data = (0..x.rows()).map(|i| logsumexp(x.row(i))).collect();
            Tensor::from_rows(x.rows(), 1, data)
        })?;
        self.push(out, Op::LogSumExpRows(a), self.rg(&[a]), "logsumexp_rows")
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, Tensor::transpose);
        self.push(out, Op::Transpose(a), self.rg(&[a]), "transpose")
    }

    pub fn select_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = self.with_value(a, |x| {
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
                Err(Error::shape(
                    "select_rows",
                    format!("row {bad} out of {}", x.rows()),
                ))
            } else {
                Ok(x.select_rows(idx))
            }
        })?;
        self.push(
            out,
            Op::SelectRows(a, idx.to_vec()),
            self.rg(&[a]),
            "select_rows",
        )
    }

    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.with_value(a, |x| {
            if start >= end || end > x.cols() {
                Err(Error::shape(
                    "slice_cols",
                    format!("[{start}, {end}) of {} columns", x.cols()),
                ))
            } else {
                Ok(x.slice_cols(start, end))
            }
        })?;
        self.push(
            out,
            Op::SliceCols(a, start),
            self.rg(&[a]),
            "slice_cols",
        )
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.concat_cols(&nodes[b.0].value)?
        };
        self.push(out, Op::ConcatCols(a, b), self.rg(&[a, b]), "concat_cols")
    }

    /// Squared Euclidean distances between the rows of `a` (`n×d`) and the
    /// rows of `b` (`m×d`), giving `n×m`.
    pub fn pairwise_sq_dist(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.cols() != y.cols() {
                return Err(Error::shape(
                    "pairwise_sq_dist",
                    format!("{:?} vs {:?}", x.shape(), y.shape()),
                ));
            }
            let (n, m) = (x.rows(), y.rows());
            let mut d = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    d[i * m + j] = x
                        .row(i)
                        .iter()
                        .zip(y.row(j))
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum();
                }
            }
            Tensor::from_rows(n, m, d)?
        };
        self.push(
            out,
            Op::PairwiseSqDist(a, b),
            self.rg(&[a, b]),
            "pairwise_sq_dist",
        )
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(
        &self,
        inputs: &[Var],
        value: Tensor,
        backward: CustomBackward,
        name: &'static str,
    ) -> Result<Var> {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), backward), rg, name)
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", root.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(root.rows(), root.cols(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
            let mut send = |v: Var, t: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign_scaled(&t, 1.0),
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    send(*a, g.matmul(&val(*b).transpose())?);
                    send(*b, val(*a).transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(val(*b), |u, y| u * y));
                    send(*b, g.zip_map(val(*a), |u, x| u * x));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    send(*a, g.zip_map(y, |u, y| u / y));
                    let gb = g.zip_map(&x.zip_map(y, |x, y| x / (y * y)), |u, r| -u * r);
                    send(*b, gb);
                }
                Op::AddRow(a, r) => {
                    send(*r, g.mean_rows().map(|v| v * g.rows() as f64));
                    send(*a, g);
                }
                Op::AddCol(a, c) => {
                    let sums = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    send(*c, Tensor::from_rows(g.rows(), 1, sums)?);
                    send(*a, g);
                }
                Op::MulCol(a, c) => {
                    let (x, k) = (val(*a), val(*c));
                    let cols = x.cols();
                    let gk = (0..x.rows())
                        .map(|i| {
                            g.row(i)
                                .iter()
                                .zip(x.row(i))
                                .map(|(u, v)| u * v)
                                .sum()
                        })
                        .collect();
                    send(*c, Tensor::from_rows(x.rows(), 1, gk)?);
                    let mut ga = g;
                    for (i, v) in ga.data_mut().iter_mut().enumerate() {
                        *v *= k.data()[i / cols];
                    }
                    send(*a, ga);
                }
                Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
                Op::AddScalar(a) => send(*a, g),
                Op::Unary(a, kind) => {
                    let x = val(*a);
                    let y = &node.value;
                    let local = x.zip_map(y, |x, y| kind.derivative(x, y));
                    send(*a, g.zip_map(&local, |u, d| u * d));
                }
                Op::Sum(a) => {
                    let (r, c) = (val(*a).rows(), val(*a).cols());
                    send(*a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    send(
                        *a,
                        Tensor::filled(x.rows(), x.cols(), g.item() / x.len() as f64),
                    );
                }
                Op::MeanRows(a) => {
                    let x = val(*a);
                    let n = x.rows() as f64;
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    let c = x.cols();
                    for (i, v) in out.data_mut().iter_mut().enumerate() {
                        *v = g.data()[i % c] / n;
                    }
                    send(*a, out);
                }
                Op::SumCols(a) => {
                    let x = val(*a);
                    let c = x.cols();
                    let mut out = Tensor::zeros(x.rows(), c);
                    for (i, v) in out.data_mut().iter_mut().enumerate() {
                        *v = g.data()[i / c];
                    }
                    send(*a, out);
                }
                Op::LogSumExpRows(a) => {
                    let x = val(*a);
                    let c = x.cols();
                    let mut out = Tensor::zeros(x.rows(), c);
                    for i in 0..x.rows() {
                        let lse = node.value.data()[i];
                        for j in 0..c {
                            out.set(i, j, g.data()[i] * (x.get(i, j) - lse).exp());
                        }
                    }
                    send(*a, out);
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::SelectRows(a, idx) => {
                    let x = val(*a);
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    let c = x.cols();
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            let cur = out.get(i, j);
                            out.set(i, j, cur + g.get(k, j));
                        }
                    }
                    send(*a, out);
                }
                Op::SliceCols(a, start) => {
                    let x = val(*a);
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            out.set(i, start + j, g.get(i, j));
                        }
                    }
                    send(*a, out);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    send(*a, g.slice_cols(0, ca));
                    send(*b, g.slice_cols(ca, g.cols()));
                }
                Op::PairwiseSqDist(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let (n, m, d) = (x.rows(), y.rows(), x.cols());
                    let mut ga = Tensor::zeros(n, d);
                    let mut gb = Tensor::zeros(m, d);
                    for i in 0..n {
                        for j in 0..m {
                            let u = 2.0 * g.get(i, j);
                            if u == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                let diff = u * (x.get(i, k) - y.get(j, k));
                                ga.set(i, k, ga.get(i, k) + diff);
                                gb.set(j, k, gb.get(j, k) - diff);
                            }
                        }
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Custom(inputs, backward) => {
                    let parts = backward(&g);
                    for (v, t) in inputs.iter().zip(parts) {
                        send(*v, t);
                    }
                }
            }
        }

        let mut out = HashMap::new();
        let mut shapes = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                shapes.insert(id, (node.value.rows(), node.value.cols()));
                if let Some(g) = grads[id].take() {
                    if !g.is_finite() {
                        return Err(Error::NonFinite { op: "backward" });
                    }
                    out.insert(id, g);
                }
            }
        }
        Ok(Gradients {
            grads: out,
            shapes,
        })
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
