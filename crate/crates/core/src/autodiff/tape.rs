use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Matrix, SparseMatrix};
use crate::error::{Error, Result};

/// Floor applied to `ln` arguments and to norm denominators.
pub const EPS: f64 = 1e-12;

/// `exp` arguments are clamped here so finite inputs never overflow.
const EXP_MAX_ARG: f64 = 700.0;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    SparseMatMul(Arc<SparseMatrix>, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    RowL2Normalize(usize),
    RowMean(usize),
    ColMean(usize),
    Sum(usize),
    FrobeniusNorm(usize),
    Softplus(usize),
    RowSoftmax(usize),
    Dropout(usize, Matrix),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss, keyed by leaf name.
pub type Gradients = BTreeMap<String, Matrix>;

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A tape is meant to be built for one step and dropped afterwards.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    leaves: Vec<(String, usize)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaves: Vec::new(),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a named trainable leaf.
    pub fn leaf(&mut self, name: impl Into<String>, value: Matrix) -> Result<Var> {
        let name = name.into();
        if self.leaves.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(format!("leaf `{name}` registered twice")));
        }
        let var = self.push(value, Op::Leaf, true);
        self.leaves.push((name, var.index));
        Ok(var)
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Forward value of `var`.
    ///
    /// # Panics
    ///
    /// If `var` was created by another tape.
    pub fn value(&self, var: Var) -> &Matrix {
        assert_eq!(var.tape, self.id, "variable belongs to another tape");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).shape()
    }

    /// Scalar value of a `1 × 1` variable.
    pub fn scalar(&self, var: Var) -> Result<f64> {
        self.check(var)?;
        self.nodes[var.index].value.item()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.index)
    }

    fn needs(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn unary(&mut self, a: Var, f: impl Fn(&Matrix) -> Matrix, op: fn(usize) -> Op) -> Result<Var> {
        let ia = self.check(a)?;
        let value = f(&self.nodes[ia].value);
        let rg = self.needs(&[ia]);
        Ok(self.push(value, op(ia), rg))
    }

    fn binary_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (rows, cols) = broadcast_shape(name, va.shape(), vb.shape())?;
        let value = Matrix::from_fn(rows, cols, |r, c| f(at(va, r, c), at(vb, r, c)));
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(value, op(ia, ib), rg))
    }

    /// Dense product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(value, Op::MatMul(ia, ib), rg))
    }

    /// Sparse-dense product `s · b`; `s` is a constant.
    pub fn sparse_matmul(&mut self, s: &Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let ib = self.check(b)?;
        let value = s.mul_dense(&self.nodes[ib].value)?;
        let rg = self.needs(&[ib]);
        Ok(self.push(value, Op::SparseMatMul(Arc::clone(s), ib), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Matrix::transpose, Op::Transpose)
    }

    /// Elementwise sum. Either operand may be a `1 × c` row vector, an
    /// `r × 1` column vector or a `1 × 1` scalar broadcast against the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast("add", a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise difference, broadcasting like [`Tape::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product, broadcasting like [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.scale(factor);
        let rg = self.needs(&[ia]);
        Ok(self.push(value, Op::Scale(ia, factor), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |m| m.map(sigmoid), Op::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |m| m.map(|x| x.min(EXP_MAX_ARG).exp()), Op::Exp)
    }

    /// `ln(max(x, 1e-12))`.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |m| m.map(|x| x.max(EPS).ln()), Op::Ln)
    }

    /// Scales each row to unit L2 norm. Rows with norm below `1e-12` map to
    /// zero rows.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |m| {
                let mut out = m.clone();
                for r in 0..m.rows() {
                    let row = out.row_mut(r);
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < EPS {
                        row.fill(0.0);
                    } else {
                        row.iter_mut().for_each(|v| *v /= norm);
                    }
                }
                out
            },
            Op::RowL2Normalize,
        )
    }

    /// `n × d → n × 1` mean of each row.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |m| {
                let d = m.cols().max(1) as f64;
                Matrix::from_fn(m.rows(), 1, |r, _| m.row(r).iter().sum::<f64>() / d)
            },
            Op::RowMean,
        )
    }

    /// `n × d → 1 × d` mean of each column.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |m| {
                let mut out = Matrix::zeros(1, m.cols());
                for r in 0..m.rows() {
                    for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
                        *o += v;
                    }
                }
                let n = m.rows().max(1) as f64;
                out.as_mut_slice().iter_mut().for_each(|v| *v /= n);
                out
            },
            Op::ColMean,
        )
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |m| Matrix::scalar(m.sum()), Op::Sum)
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |m| Matrix::scalar(m.frobenius_norm()), Op::FrobeniusNorm)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |m| m.map(softplus), Op::Softplus)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |m| {
                let mut out = m.clone();
                for r in 0..m.rows() {
                    let row = out.row_mut(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= total);
                }
                out
            },
            Op::RowSoftmax,
        )
    }

    /// Inverted dropout: entries are zeroed with probability `rate` and the
    /// survivors scaled by `1 / (1 - rate)`. A rate of zero returns `a`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        self.check(a)?;
        if rate == 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.shape(a);
        let keep = 1.0 / (1.0 - rate);
        let mask = Matrix::from_fn(rows, cols, |_, _| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        self.dropout_with_mask(a, mask)
    }

    /// Multiplies `a` by a precomputed mask whose entries are already scaled.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if va.shape() != mask.shape() {
            return Err(Error::shape("dropout", va.shape(), mask.shape()));
        }
        let value = va.zip_map(&mask, |x, m| x * m);
        let rg = self.needs(&[ia]);
        Ok(self.push(value, Op::Dropout(ia, mask), rg))
    }

    /// Stacks variables vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows of nothing".into()));
        }
        let idx = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Matrix> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = Matrix::vstack(&values).map_err(|e| match e {
            Error::ShapeMismatch { lhs, rhs, .. } => Error::shape("concat_rows", lhs, rhs),
            other => other,
        })?;
        let rg = self.needs(&idx);
        Ok(self.push(value, Op::ConcatRows(idx), rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if start + len > va.rows() {
            return Err(Error::InvalidArgument(format!(
                "slice_rows {start}..{} out of range for {} rows",
                start + len,
                va.rows()
            )));
        }
        let value = va.slice_rows(start, len);
        let rg = self.needs(&[ia]);
        Ok(self.push(value, Op::SliceRows(ia, start), rg))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns a gradient for every registered leaf; leaves the loss does not
    /// depend on get zero matrices.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        let shape = self.nodes[root].value.shape();
        if shape != (1, 1) {
            return Err(Error::NotScalar { shape });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Matrix::scalar(1.0));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        Ok(self
            .leaves
            .iter()
            .map(|(name, i)| {
                let g = grads[..]
                    .get(*i)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| {
                        let (r, c) = self.nodes[*i].value.shape();
                        Matrix::zeros(r, c)
                    });
                (name.clone(), g)
            })
            .collect())
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
        if !self.nodes[i].requires_grad {
            return;
        }
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        let out = &node.value;
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.nodes[a].requires_grad {
                    self.accumulate(grads, a, g.matmul_transposed(val(b))?);
                }
                if self.nodes[b].requires_grad {
                    self.accumulate(grads, b, val(a).transposed_matmul(g)?);
                }
            }
            Op::SparseMatMul(ref s, b) => {
                self.accumulate(grads, b, s.transpose_mul_dense(g)?);
            }
            Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, a, reduce_to(g, val(a).shape()));
                self.accumulate(grads, b, reduce_to(g, val(b).shape()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, reduce_to(g, val(a).shape()));
                self.accumulate(grads, b, reduce_to(&g.scale(-1.0), val(b).shape()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                if self.nodes[a].requires_grad {
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * at(vb, r, c));
                    self.accumulate(grads, a, reduce_to(&ga, va.shape()));
                }
                if self.nodes[b].requires_grad {
                    let gb = Matrix::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * at(va, r, c));
                    self.accumulate(grads, b, reduce_to(&gb, vb.shape()));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, a, g.scale(k)),
            Op::Sigmoid(a) => {
                self.accumulate(grads, a, g.zip_map(out, |g, s| g * s * (1.0 - s)));
            }
            Op::Exp(a) => {
                let ga = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                    if val(a).get(r, c) > EXP_MAX_ARG {
                        0.0
                    } else {
                        g.get(r, c) * out.get(r, c)
                    }
                });
                self.accumulate(grads, a, ga);
            }
            Op::Ln(a) => {
                let ga = g.zip_map(val(a), |g, x| if x > EPS { g / x } else { 0.0 });
                self.accumulate(grads, a, ga);
            }
            Op::RowL2Normalize(a) => {
                let x = val(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < EPS {
                        continue;
                    }
                    let y = out.row(r);
                    let gr = g.row(r);
                    let proj: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = (gv - yv * proj) / norm;
                    }
                }
                self.accumulate(grads, a, ga);
            }
            Op::RowMean(a) => {
                let (rows, cols) = val(a).shape();
                let d = cols.max(1) as f64;
                self.accumulate(grads, a, Matrix::from_fn(rows, cols, |r, _| g.get(r, 0) / d));
            }
            Op::ColMean(a) => {
                let (rows, cols) = val(a).shape();
                let n = rows.max(1) as f64;
                self.accumulate(grads, a, Matrix::from_fn(rows, cols, |_, c| g.get(0, c) / n));
            }
            Op::Sum(a) => {
                let (rows, cols) = val(a).shape();
                self.accumulate(grads, a, Matrix::filled(rows, cols, g.get(0, 0)));
            }
            Op::FrobeniusNorm(a) => {
                let k = g.get(0, 0) / out.get(0, 0).max(EPS);
                self.accumulate(grads, a, val(a).scale(k));
            }
            Op::Softplus(a) => {
                self.accumulate(grads, a, g.zip_map(val(a), |g, x| g * sigmoid(x)));
            }
            Op::RowSoftmax(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let inner: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, a, ga);
            }
            Op::Dropout(a, ref mask) => {
                self.accumulate(grads, a, g.zip_map(mask, |g, m| g * m));
            }
            Op::ConcatRows(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    self.accumulate(grads, p, g.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let x = val(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    ga.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, a, ga);
            }
        }
        Ok(())
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

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(op, a, b)),
    }
}

#[inline]
fn at(m: &Matrix, r: usize, c: usize) -> f64 {
    let r = if m.rows() == 1 { 0 } else { r };
    let c = if m.cols() == 1 { 0 } else { c };
    m.get(r, c)
}

/// Sums `g` over the dimensions that were broadcast to reach its shape.
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let (ro, co) = (
                if shape.0 == 1 { 0 } else { r },
                if shape.1 == 1 { 0 } else { c },
            );
            out.set(ro, co, out.get(ro, co) + g.get(r, c));
        }
    }
    out
}
