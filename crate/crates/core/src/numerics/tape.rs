//! Reverse-mode autodiff over a per-step tape.
//!
//! Every forward op appends a node holding its output value. `backward`
//! walks the nodes in reverse and accumulates vector-Jacobian products.
//! A tape is built for one evaluation and then dropped.

use super::tensor::{gemm, gemm_strided, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rounds every weight to the nearest `f32`, the precision used on disk.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Tanh(Var),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Silu(_) => "silu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSoftmaxRows(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::ConcatCols(_) => "concat",
            Op::SliceCols(..) => "slice",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    failure: Option<&'static str>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.failure.is_none() && !value.is_finite() {
            self.failure = Some(op.name());
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNT(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::ConcatCols(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Silu(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::Reshape(a) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Errors if any forward value so far was non-finite.
    pub fn check(&self) -> Result<()> {
        match self.failure {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Registers a parameter; repeated calls for the same id share one node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(params.get(id).value.clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `a: [n, m]` plus the row vector `b: [m]` on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let m = ta.cols();
        assert_eq!(tb.len(), m, "add_row: row length mismatch");
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(tb.data()).for_each(|(o, &x)| *o += x);
        }
        let v = Tensor::from_parts(ta.shape().to_vec(), out);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = map(self.value(a), |x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = map(self.value(a), |x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(tb.rows(), k, "matmul: inner dimension mismatch");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, ta.data(), tb.data(), &mut out);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
        assert_eq!(tb.cols(), k, "matmul_nt: inner dimension mismatch");
        let mut out = vec![0.0; n * m];
        gemm_strided(
            n,
            k,
            m,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (1, k as isize),
            &mut out,
            0.0,
        );
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMulNT(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = map(self.value(a), softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Row-wise softmax of a `[n, m]` matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let out: Vec<f64> = t.data().chunks(m).map(|r| r.iter().sum()).collect();
        let n = out.len();
        self.push(Tensor::from_parts(vec![n, 1], out), Op::SumRows(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), n, "concat_cols: row count mismatch");
                out.extend_from_slice(t.row(r));
            }
        }
        self.push(
            Tensor::from_parts(vec![n, total], out),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let (n, m) = (t.rows(), t.cols());
        assert!(start + len <= m, "slice_cols: out of range");
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(
            Tensor::from_parts(vec![n, len], out),
            Op::SliceCols(a, start),
        )
    }

    /// Row `indices[i]` of `a` becomes row `i` of the output.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let t = self.value(a);
        let m = t.cols();
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        self.push(
            Tensor::from_parts(vec![indices.len(), m], out),
            Op::GatherRows(a, indices.to_vec()),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape).expect("reshape: size mismatch");
        self.push(t, Op::Reshape(a))
    }

    /// Elementwise `|a - b|`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.abs(d)
    }

    /// Elementwise `(a - b)²`.
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.square(d)
    }

    /// Accumulates `d loss / d param` into `params` for every parameter on the tape.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        self.check()?;
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                params
                    .get_mut(id)
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(p, d)| *p += d);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} (backward)", node.op.name())));
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], g.len(), |buf| {
                            buf.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, d)| *o -= d)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((o, d), y) in buf.iter_mut().zip(g).zip(tb) {
                            *o += d * y;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for ((o, d), x) in buf.iter_mut().zip(g).zip(ta) {
                            *o += d * x;
                        }
                    });
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                    });
                }
                if self.wants(*b) {
                    let m = self.value(*b).len();
                    accumulate(&mut grads[b.0], m, |buf| {
                        for row in g.chunks(m) {
                            buf.iter_mut().zip(row).for_each(|(o, d)| *o += d);
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, d)| *o += d * s)
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    // dA = G Bᵀ
                    accumulate(&mut grads[a.0], n * k, |buf| {
                        gemm_strided(
                            n,
                            m,
                            k,
                            g,
                            (m as isize, 1),
                            tb.data(),
                            (1, m as isize),
                            buf,
                            1.0,
                        )
                    });
                }
                if self.wants(*b) {
                    // dB = Aᵀ G
                    accumulate(&mut grads[b.0], k * m, |buf| {
                        gemm_strided(
                            k,
                            n,
                            m,
                            ta.data(),
                            (1, k as isize),
                            g,
                            (m as isize, 1),
                            buf,
                            1.0,
                        )
                    });
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                if self.wants(*a) {
                    // dA = G B
                    accumulate(&mut grads[a.0], n * k, |buf| {
                        gemm_strided(
                            n,
                            m,
                            k,
                            g,
                            (m as isize, 1),
                            tb.data(),
                            (k as isize, 1),
                            buf,
                            1.0,
                        )
                    });
                }
                if self.wants(*b) {
                    // dB = Gᵀ A
                    accumulate(&mut grads[b.0], m * k, |buf| {
                        gemm_strided(
                            m,
                            n,
                            k,
                            g,
                            (1, m as isize),
                            ta.data(),
                            (k as isize, 1),
                            buf,
                            1.0,
                        )
                    });
                }
            }
            Op::Tanh(a) => self.unary(*a, out, g, grads, |_, y| 1.0 - y * y),
            Op::Relu(a) => self.unary(*a, out, g, grads, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Silu(a) => self.unary(*a, out, g, grads, |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }),
            Op::Sigmoid(a) => self.unary(*a, out, g, grads, |_, y| y * (1.0 - y)),
            Op::Softplus(a) => self.unary(*a, out, g, grads, |x, _| sigmoid(x)),
            Op::Abs(a) => self.unary(*a, out, g, grads, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(a) => self.unary(*a, out, g, grads, |x, _| 2.0 * x),
            Op::SoftmaxRows(a) => {
                let m = out.cols();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((o, y), d) in buf.chunks_mut(m).zip(out.data().chunks(m)).zip(g.chunks(m))
                    {
                        let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            o[j] += y[j] * (d[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let m = out.cols();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((o, y), d) in buf.chunks_mut(m).zip(out.data().chunks(m)).zip(g.chunks(m))
                    {
                        let total: f64 = d.iter().sum();
                        for j in 0..m {
                            o[j] += d[j] - y[j].exp() * total;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                accumulate(&mut grads[a.0], n, |buf| buf.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let d = g[0] / n as f64;
                accumulate(&mut grads[a.0], n, |buf| buf.iter_mut().for_each(|o| *o += d));
            }
            Op::SumRows(a) => {
                let t = self.value(*a);
                let m = t.cols();
                accumulate(&mut grads[a.0], t.len(), |buf| {
                    for (row, d) in buf.chunks_mut(m).zip(g) {
                        row.iter_mut().for_each(|o| *o += d);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let w = t.cols();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], t.len(), |buf| {
                            for (row, src) in buf.chunks_mut(w).zip(g.chunks(total)) {
                                row.iter_mut()
                                    .zip(&src[offset..offset + w])
                                    .for_each(|(o, d)| *o += d);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let m = t.cols();
                let w = out.cols();
                accumulate(&mut grads[a.0], t.len(), |buf| {
                    for (row, src) in buf.chunks_mut(m).zip(g.chunks(w)) {
                        row[*start..*start + w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::GatherRows(a, indices) => {
                let t = self.value(*a);
                let m = t.cols();
                accumulate(&mut grads[a.0], t.len(), |buf| {
                    for (&i, src) in indices.iter().zip(g.chunks(m)) {
                        buf[i * m..(i + 1) * m]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, d)| *o += d);
                    }
                });
            }
        }
    }

    /// Elementwise op with derivative `f'(x, y)` in terms of input `x` and output `y`.
    fn unary(
        &self,
        a: Var,
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        deriv: impl Fn(f64, f64) -> f64,
    ) {
        let x = self.value(a).data();
        let y = out.data();
        accumulate(&mut grads[a.0], g.len(), |buf| {
            for i in 0..buf.len() {
                buf[i] += g[i] * deriv(x[i], y[i]);
            }
        });
    }
}
