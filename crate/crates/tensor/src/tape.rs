//! Tape-based reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value and enough context for
//! its backward rule. Because nodes are only ever appended, tape order is a
//! topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{shape_err, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    Clamp(Var, f32, f32),
    Minimum(Var, Var),
    GradReverse(Var, f32),
    CrossEntropy(Var, Vec<usize>, Vec<f32>),
    Mse(Var, Var),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed operations. Parameters are borrowed from a
/// [`ParamStore`] for the tape's lifetime, never copied.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Result of one backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Vec<f32>>,
    leaves: BTreeMap<usize, Vec<f32>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f32])> {
        self.params.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Gradient of a leaf created with `requires_grad = true`.
    pub fn wrt(&self, var: Var) -> Option<&[f32]> {
        self.leaves.get(&var.0).map(Vec::as_slice)
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// `c = alpha * a * b + beta * c` over explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches for the
    // row-major (or transposed-view) strides passed by callers.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_rows(x: &Tensor) -> Vec<f32> {
    let c = x.cols();
    let mut out = vec![0.0f32; x.numel()];
    for (src, dst) in x.data().chunks(c).zip(out.chunks_mut(c)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f32;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, op, needs_grad))
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push_checked("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(store.value(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if bt.shape().len() != 2 || at.cols() != bt.shape()[0] {
            return shape_err("matmul", format!("{:?} x {:?}", at.shape(), bt.shape()));
        }
        let (m, k, n) = (at.rows(), at.cols(), bt.cols());
        let mut out = vec![0.0f32; m * n];
        gemm(m, k, n, at.data(), (k, 1), bt.data(), (n, 1), 0.0, &mut out);
        let needs = self.ng(&[a, b]);
        self.push_checked("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        same_shape(name, at, bt)?;
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(at.shape(), data)?;
        let needs = self.ng(&[a, b]);
        self.push_checked(name, out, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("minimum", a, b, f32::min, Op::Minimum(a, b))
    }

    /// Row-broadcast bias add: `x[r, c] + b[c]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        let c = xt.cols();
        if bt.numel() != c {
            return shape_err("add_bias", format!("{:?} + {:?}", xt.shape(), bt.shape()));
        }
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, &bias) in row.iter_mut().zip(bt.data()) {
                *v += bias;
            }
        }
        let out = Tensor::new(xt.shape(), data)?;
        let needs = self.ng(&[x, b]);
        self.push_checked("add_bias", out, Op::AddBias(x, b), needs)
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Result<Var> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xt.shape(), data)?;
        let needs = self.ng(&[x]);
        self.push_checked(name, out, op, needs)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        self.map("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        self.map("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map("tanh", x, f32::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, f32::exp, Op::Exp(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        self.map("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Identity forward; the backward pass multiplies the upstream gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f32) -> Result<Var> {
        if !lambda.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_reverse" });
        }
        let out = self.value(x).clone();
        let needs = self.ng(&[x]);
        Ok(self.push(out, Op::GradReverse(x, lambda), needs))
    }

    /// Concatenates along the trailing axis; all inputs share a row count.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs");
        };
        let rows = self.value(first).rows();
        if xs.iter().any(|&v| self.value(v).rows() != rows) {
            return shape_err("concat", "row counts differ");
        }
        let total: usize = xs.iter().map(|&v| self.value(v).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in xs {
                data.extend_from_slice(self.value(v).row_slice(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        let needs = self.ng(xs);
        Ok(self.push(out, Op::ConcatCols(xs.to_vec()), needs))
    }

    /// Stacks inputs vertically; all inputs share a column count.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat_rows", "no inputs");
        };
        let cols = self.value(first).cols();
        if xs.iter().any(|&v| self.value(v).cols() != cols) {
            return shape_err("concat_rows", "column counts differ");
        }
        let rows: usize = xs.iter().map(|&v| self.value(v).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &v in xs {
            data.extend_from_slice(self.value(v).data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        let needs = self.ng(xs);
        Ok(self.push(out, Op::ConcatRows(xs.to_vec()), needs))
    }

    /// Columns `[start, end)`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        if start >= end || end > c {
            return shape_err("slice", format!("[{start}, {end}) of {c} columns"));
        }
        let rows = xt.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xt.row_slice(r)[start..end]);
        }
        let out = Tensor::new(&[rows, end - start], data)?;
        let needs = self.ng(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), needs))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xt = self.value(x);
        let (rows, c) = (xt.rows(), xt.cols());
        if start >= end || end > rows {
            return shape_err("slice_rows", format!("[{start}, {end}) of {rows} rows"));
        }
        let out = Tensor::new(&[end - start, c], xt.data()[start * c..end * c].to_vec())?;
        let needs = self.ng(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), needs))
    }

    /// Selects rows `idx` (repeats allowed), producing `[idx.len(), cols]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let (rows, c) = (xt.rows(), xt.cols());
        if idx.is_empty() {
            return shape_err("gather_rows", "no rows selected");
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &r in idx {
            if r >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: r,
                    bound: rows,
                });
            }
            data.extend_from_slice(xt.row_slice(r));
        }
        let out = Tensor::new(&[idx.len(), c], data)?;
        let needs = self.ng(&[x]);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|&v| f64::from(v)).sum();
        let needs = self.ng(&[x]);
        self.push_checked("sum", Tensor::scalar(s as f32), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s: f64 = xt.data().iter().map(|&v| f64::from(v)).sum();
        let m = s / xt.numel().max(1) as f64;
        let needs = self.ng(&[x]);
        self.push_checked("mean", Tensor::scalar(m as f32), Op::Mean(x), needs)
    }

    /// Row-wise softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let out = Tensor::new(xt.shape(), softmax_rows(xt))?;
        let needs = self.ng(&[x]);
        self.push_checked("softmax", out, Op::Softmax(x), needs)
    }

    /// Row-wise log-softmax, stabilized by max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        let mut data = vec![0.0f32; xt.numel()];
        for (src, dst) in xt.data().chunks(c).zip(data.chunks_mut(c)) {
            let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = src.iter().map(|&s| (s - max).exp()).sum::<f32>().ln() + max;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let out = Tensor::new(xt.shape(), data)?;
        let needs = self.ng(&[x]);
        self.push_checked("log_softmax", out, Op::LogSoftmax(x), needs)
    }

    /// Selects `x[r, idx[r]]` for every row, producing `[rows, 1]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let (rows, c) = (xt.rows(), xt.cols());
        if idx.len() != rows {
            return shape_err("pick", format!("{} indices for {rows} rows", idx.len()));
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &i) in idx.iter().enumerate() {
            if i >= c {
                return Err(TensorError::Index {
                    op: "pick",
                    index: i,
                    bound: c,
                });
            }
            data.push(xt.data()[r * c + i]);
        }
        let out = Tensor::new(&[rows, 1], data)?;
        let needs = self.ng(&[x]);
        Ok(self.push(out, Op::Pick(x, idx.to_vec()), needs))
    }

    /// Mean over rows of `-log softmax(logits[r])[labels[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        let (rows, c) = (lt.rows(), lt.cols());
        if c < 2 {
            return shape_err("cross_entropy", "need at least two classes");
        }
        if labels.len() != rows {
            return shape_err("cross_entropy", format!("{} labels for {rows} rows", labels.len()));
        }
        let probs = softmax_rows(lt);
        let mut total = 0.0f64;
        for (r, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: label,
                    bound: c,
                });
            }
            let row = lt.row_slice(r);
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
            // ln(sum exp(s - max)) = ln_1p(sum over the non-max entries)
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &s)| f64::from(s - max).exp())
                .sum();
            total += rest.ln_1p() - f64::from(row[label] - max);
        }
        let loss = Tensor::scalar((total / rows as f64) as f32);
        let needs = self.ng(&[logits]);
        self.push_checked(
            "cross_entropy",
            loss,
            Op::CrossEntropy(logits, labels.to_vec(), probs),
            needs,
        )
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pt, tt) = (self.value(pred), self.value(target));
        same_shape("mse", pt, tt)?;
        let s: f64 = pt
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&p, &t)| {
                let d = f64::from(p - t);
                d * d
            })
            .sum();
        let loss = Tensor::scalar((s / pt.numel().max(1) as f64) as f32);
        let needs = self.ng(&[pred, target]);
        self.push_checked("mse", loss, Op::Mse(pred, target), needs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, g);
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                op => self.propagate(op, node.value.get(), &g, &mut grads)?,
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        // Accumulation buffer for `v`, or None if `v` does not need a gradient.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].needs_grad {
                    let n = self.value(v).numel();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
                } else {
                    None
                }
            }};
        }

        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.rows(), at.cols(), bt.cols());
                if let Some(da) = buf!(*a) {
                    gemm(m, n, k, g, (n, 1), bt.data(), (1, n), 1.0, da);
                }
                if let Some(db) = buf!(*b) {
                    gemm(k, m, n, at.data(), (1, k), g, (n, 1), 1.0, db);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = buf!(*a) {
                    da.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
                if let Some(db) = buf!(*b) {
                    db.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = buf!(*a) {
                    da.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
                if let Some(db) = buf!(*b) {
                    db.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data();
                if let Some(da) = buf!(*a) {
                    for ((d, &s), &o) in da.iter_mut().zip(g).zip(bv) {
                        *d += s * o;
                    }
                }
                let av = self.value(*a).data();
                if let Some(db) = buf!(*b) {
                    for ((d, &s), &o) in db.iter_mut().zip(g).zip(av) {
                        *d += s * o;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(da) = buf!(*a) {
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            da[i] += g[i];
                        }
                    }
                }
                if let Some(db) = buf!(*b) {
                    for i in 0..g.len() {
                        if av[i] > bv[i] {
                            db[i] += g[i];
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
                if let Some(db) = buf!(*b) {
                    let c = db.len();
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * c);
                }
            }
            Op::AddScalar(x) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
            }
            Op::ConcatCols(xs) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).cols();
                    if let Some(dv) = buf!(v) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            dv[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let n = self.value(v).numel();
                    if let Some(dv) = buf!(v) {
                        dv.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, &s)| *d += s);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let c = self.value(*x).cols();
                let w = y.cols();
                if let Some(dx) = buf!(*x) {
                    for (r, src) in g.chunks(w).enumerate() {
                        let dst = &mut dx[r * c + start..r * c + start + w];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = y.cols();
                if let Some(dx) = buf!(*x) {
                    let dst = &mut dx[start * c..start * c + g.len()];
                    dst.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
            }
            Op::GatherRows(x, idx) => {
                let c = y.cols();
                if let Some(dx) = buf!(*x) {
                    for (src, &r) in g.chunks(c).zip(idx) {
                        dx[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = buf!(*x) {
                    let s = g[0] / dx.len() as f32;
                    dx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, &s), &o) in dx.iter_mut().zip(g).zip(y.data()) {
                        if o > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, &s), &o) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += s * (1.0 - o * o);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, &s), &o) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += s * o * (1.0 - o);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, &s), &o) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += s * o;
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                if let Some(dx) = buf!(*x) {
                    for ((d, &s), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *d += s;
                        }
                    }
                }
            }
            Op::GradReverse(x, lambda) => {
                if let Some(dx) = buf!(*x) {
                    let neg = -*lambda;
                    dx.iter_mut().zip(g).for_each(|(d, &s)| *d += neg * s);
                }
            }
            Op::Softmax(x) => {
                let c = y.cols();
                if let Some(dx) = buf!(*x) {
                    for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, &gs), &ys) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += ys * (gs - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                if let Some(dx) = buf!(*x) {
                    for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let gsum: f32 = gr.iter().sum();
                        for ((d, &gs), &ys) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += gs - ys.exp() * gsum;
                        }
                    }
                }
            }
            Op::Pick(x, idx) => {
                let c = self.value(*x).cols();
                if let Some(dx) = buf!(*x) {
                    for (r, &i) in idx.iter().enumerate() {
                        dx[r * c + i] += g[r];
                    }
                }
            }
            Op::CrossEntropy(x, labels, probs) => {
                let c = self.value(*x).cols();
                let s = g[0] / labels.len() as f32;
                if let Some(dx) = buf!(*x) {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            dx[r * c + j] += s * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let s = 2.0 * g[0] / av.len() as f32;
                let diff: Vec<f32> = av.iter().zip(bv).map(|(p, t)| s * (p - t)).collect();
                if let Some(da) = buf!(*a) {
                    da.iter_mut().zip(&diff).for_each(|(d, &v)| *d += v);
                }
                if let Some(db) = buf!(*b) {
                    db.iter_mut().zip(&diff).for_each(|(d, &v)| *d -= v);
                }
            }
        }
        Ok(())
    }
}
