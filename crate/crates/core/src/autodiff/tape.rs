//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each primitive appends a node
//! holding its output value and the ids of its inputs; [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a reverse topological
//! order by construction.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Scalar function pair used by [`Tape::custom_unary`].
pub type UnaryFn = fn(f64) -> f64;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Arc<Tensor>),
    Relu(Var),
    Tanh(Var),
    Log(Var),
    Abs(Var),
    ClampMax(Var, f64),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    GroupSoftmax(Var, usize),
    GroupSum(Var, usize),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    Pick(Var, Arc<Vec<usize>>),
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    SumCols(Var),
    Custom(Var, UnaryFn),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitives during a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    branch: u64,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            branch: 0xCBF2_9CE4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every discrete choice taken so far (ReLU masks, clamp sides,
    /// externally noted selections). Two evaluations with equal signatures
    /// ran through the same differentiable branch.
    pub fn branch_signature(&self) -> u64 {
        self.branch
    }

    fn mix(&mut self, bits: impl IntoIterator<Item = u64>) {
        for b in bits {
            self.branch = (self.branch ^ b).wrapping_mul(FNV_PRIME);
        }
    }

    /// Folds an index selection made outside the tape (e.g. nearest-neighbor
    /// lookups) into the branch signature.
    pub fn note_branch(&mut self, ids: &[usize]) {
        self.mix(ids.iter().map(|&i| i as u64));
    }

    fn mix_mask(&mut self, a: Var, pred: impl Fn(f64) -> bool) {
        let words = mask_words(self.value(a).data(), pred);
        self.mix(words);
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Places a parameter on the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        Ok(ta.zip_map(tb, f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn row_broadcast(
        &mut self,
        a: Var,
        row: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch(name, ta, tr));
        }
        let mut out = ta.clone();
        let c = ta.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = f(*v, tr.data()[i % c]);
        }
        Ok(out)
    }

    /// `a + 1·row`: adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(a, row, "add_row", |x, y| x + y)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(a, row, "mul_row", |x, y| x * y)?;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    /// Elementwise product with a constant (not differentiated) tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(mismatch("mul_const", self.value(a), &c));
        }
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.push(out, Op::MulConst(a, Arc::new(c))))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.mix_mask(a, |x| x > 0.0);
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.mix_mask(a, |x| x >= 0.0);
        self.push(out, Op::Abs(a))
    }

    /// `min(a, c)` elementwise.
    pub fn clamp_max(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x.min(c));
        self.mix_mask(a, |x| x < c);
        self.push(out, Op::ClampMax(a, c))
    }

    /// `max(a, c)` elementwise.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x.max(c));
        self.mix_mask(a, |x| x > c);
        self.push(out, Op::ClampMin(a, c))
    }

    /// Softmax along axis 1 (each row sums to one).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_slice_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax along axis 0 inside consecutive blocks of `group` rows, per column.
    pub fn group_softmax(&mut self, a: Var, group: usize) -> Result<Var> {
        let x = self.value(a);
        if group == 0 || !x.rows().is_multiple_of(group) {
            return Err(Error::InvalidArgument(format!(
                "group_softmax: {} rows not divisible into groups of {group}",
                x.rows()
            )));
        }
        let c = x.cols();
        let mut out = x.clone();
        let data = out.data_mut();
        for g in 0..x.rows() / group {
            let base = g * group * c;
            for j in 0..c {
                let mut m = f64::NEG_INFINITY;
                for i in 0..group {
                    m = m.max(data[base + i * c + j]);
                }
                let mut s = 0.0;
                for i in 0..group {
                    let e = (data[base + i * c + j] - m).exp();
                    data[base + i * c + j] = e;
                    s += e;
                }
                for i in 0..group {
                    data[base + i * c + j] /= s;
                }
            }
        }
        Ok(self.push(out, Op::GroupSoftmax(a, group)))
    }

    /// Sums consecutive blocks of `group` rows: `(g·k)×c -> g×c`.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let x = self.value(a);
        if group == 0 || !x.rows().is_multiple_of(group) {
            return Err(Error::InvalidArgument(format!(
                "group_sum: {} rows not divisible into groups of {group}",
                x.rows()
            )));
        }
        let c = x.cols();
        let mut out = Tensor::zeros(x.rows() / group, c);
        for r in 0..x.rows() {
            let dst = r / group;
            for j in 0..c {
                let v = x.get(r, j);
                out.data_mut()[dst * c + j] += v;
            }
        }
        Ok(self.push(out, Op::GroupSum(a, group)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_slice_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let c = x.cols() as f64;
        for r in 0..x.rows() {
            let row = out.row_slice_mut(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        self.push(out, Op::LayerNormRows(a, eps))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row_slice(r);
                out.row_slice_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), self.value(p)));
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start >= end || end > x.cols() {
            return Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{end} of {:?}",
                x.shape()
            )));
        }
        let mut out = Tensor::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            out.row_slice_mut(r)
                .copy_from_slice(&x.row_slice(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Rows of `a` at `ids`, in order (ids may repeat).
    pub fn gather_rows(&mut self, a: Var, ids: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = ids.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows: id {bad} out of {} rows",
                x.rows()
            )));
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids.iter() {
            data.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::from_vec(ids.len(), c, data)?;
        Ok(self.push(out, Op::GatherRows(a, ids)))
    }

    /// One element per row: `out[i] = a[i, cols[i]]`, shape `r×1`.
    pub fn pick(&mut self, a: Var, cols: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if cols.len() != x.rows() || cols.iter().any(|&c| c >= x.cols()) {
            return Err(Error::InvalidArgument(format!(
                "pick: {} indices for shape {:?}",
                cols.len(),
                x.shape()
            )));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| x.get(r, c)).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        Ok(self.push(out, Op::Pick(a, cols)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if rows * cols != x.len() {
            return Err(Error::InvalidArgument(format!(
                "reshape {:?} to [{rows}, {cols}]",
                x.shape()
            )));
        }
        let out = x.clone().reshaped(rows, cols);
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Sum over axis 0: `r×c -> 1×c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Sum over axis 1: `r×c -> r×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect();
        let out = Tensor::from_vec(x.rows(), 1, data).expect("shape");
        self.push(out, Op::SumCols(a))
    }

    /// Mean over axis 0: `r×c -> 1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows() as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// Elementwise `f` with user-supplied derivative `df` (evaluated at the input).
    pub fn custom_unary(&mut self, a: Var, f: UnaryFn, df: UnaryFn) -> Var {
        let out = self.value(a).map(f);
        self.push(out, Op::Custom(a, df))
    }

    /// Reverse pass from a `1×1` output. Returns gradients for every parameter
    /// placed on the tape.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let grads = self.backward_all(output)?;
        let mut out = Gradients::default();
        for (&pid, &v) in &self.param_vars {
            if let Some(g) = &grads[v.0] {
                out.insert(pid, g.clone());
            }
        }
        Ok(out)
    }

    /// Reverse pass returning the adjoint of every node (`None` = zero).
    pub fn backward_all(&self, output: Var) -> Result<Vec<Option<Tensor>>> {
        let out_val = self.value(output);
        if out_val.shape() != [1, 1] {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got {:?}",
                out_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                gemm(g, false, tb, true, &mut ga, 0.0);
                accumulate(grads, *a, ga);
                let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                gemm(ta, true, g, false, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, column_sums(g));
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                let c = ta.cols();
                let mut ga = g.clone();
                for (i, v) in ga.data_mut().iter_mut().enumerate() {
                    *v *= tr.data()[i % c];
                }
                accumulate(grads, *a, ga);
                let gr = column_sums(&g.zip_map(ta, |x, y| x * y));
                accumulate(grads, *row, gr);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::MulConst(a, c) => accumulate(grads, *a, g.zip_map(c, |x, y| x * y)),
            Op::Relu(a) => {
                accumulate(grads, *a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 }))
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(y, |d, t| d * (1.0 - t * t))),
            Op::Log(a) => accumulate(grads, *a, g.zip_map(val(*a), |d, x| d / x)),
            Op::Abs(a) => accumulate(
                grads,
                *a,
                g.zip_map(val(*a), |d, x| {
                    if x > 0.0 {
                        d
                    } else if x < 0.0 {
                        -d
                    } else {
                        0.0
                    }
                }),
            ),
            Op::ClampMax(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.zip_map(val(*a), |d, x| if x < c { d } else { 0.0 }))
            }
            Op::ClampMin(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.zip_map(val(*a), |d, x| if x > c { d } else { 0.0 }))
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in ga.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::GroupSoftmax(a, group) => {
                let c = y.cols();
                let mut ga = Tensor::zeros(y.rows(), c);
                let (yd, gd) = (y.data(), g.data());
                for blk in 0..y.rows() / group {
                    let base = blk * group * c;
                    for j in 0..c {
                        let dot: f64 = (0..*group)
                            .map(|i| yd[base + i * c + j] * gd[base + i * c + j])
                            .sum();
                        for i in 0..*group {
                            let k = base + i * c + j;
                            ga.data_mut()[k] = yd[k] * (gd[k] - dot);
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::GroupSum(a, group) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    ga.row_slice_mut(r).copy_from_slice(g.row_slice(r / group));
                }
                accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let gsum: f64 = gr.iter().sum();
                    for (o, (yv, gv)) in ga.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = gv - yv.exp() * gsum;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNormRows(a, eps) => {
                let x = val(*a);
                let c = x.cols() as f64;
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let xr = x.row_slice(r);
                    let mean = xr.iter().sum::<f64>() / c;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                    let inv = 1.0 / (var + eps).sqrt();
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let gmean = gr.iter().sum::<f64>() / c;
                    let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                    for (o, (yv, gv)) in ga.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = inv * (gv - gmean - yv * gy);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), pc);
                    for r in 0..g.rows() {
                        gp.row_slice_mut(r)
                            .copy_from_slice(&g.row_slice(r)[off..off + pc]);
                    }
                    accumulate(grads, p, gp);
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let [pr, pc] = val(p).shape();
                    let gp = Tensor::from_vec(pr, pc, g.data()[off..off + pr * pc].to_vec())
                        .expect("shape");
                    accumulate(grads, p, gp);
                    off += pr * pc;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    ga.row_slice_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, ids) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (r, &i) in ids.iter().enumerate() {
                    for (o, v) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Pick(a, cols) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (r, &c) in cols.iter().enumerate() {
                    ga.set(r, c, g.get(r, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let [r, c] = val(*a).shape();
                accumulate(grads, *a, g.clone().reshaped(r, c));
            }
            Op::SumAll(a) => {
                let [r, c] = val(*a).shape();
                accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::MeanAll(a) => {
                let [r, c] = val(*a).shape();
                let n = (r * c) as f64;
                accumulate(grads, *a, Tensor::filled(r, c, g.item() / n));
            }
            Op::SumRows(a) => {
                let [r, c] = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_slice_mut(i).copy_from_slice(g.data());
                }
                accumulate(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let [r, c] = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_slice_mut(i).fill(g.get(i, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::Custom(a, df) => {
                let df = *df;
                accumulate(grads, *a, g.zip_map(val(*a), |d, x| d * df(x)))
            }
        }
    }
}

fn mask_words(values: &[f64], pred: impl Fn(f64) -> bool) -> Vec<u64> {
    let mut words = vec![0u64; values.len() / 64 + 1];
    for (i, &v) in values.iter().enumerate() {
        if pred(v) {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row_slice(r)) {
            *o += v;
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.0, 0.0, 0.0, 0.0]));
        let s = t.softmax_rows(x);
        assert_eq!(t.value(s).data(), &[0.25; 4]);
        let a = t.constant(Tensor::row(&[1.0, 2.0]));
        let b = t.constant(Tensor::row(&[3.0, 4.0]));
        let h = t.mul(a, b).unwrap();
        assert_eq!(t.value(h).data(), &[3.0, 8.0]);
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(3, 2));
        match t.add(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!((lhs, rhs), ([2, 3], [3, 2]));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        let r = t.constant(Tensor::zeros(1, 2));
        assert!(t.add_row(a, r).is_err());
    }

    #[test]
    fn unused_branches_get_no_gradient() {
        let mut store = ParamStore::default();
        let used = store.add("used", Tensor::row(&[2.0]));
        let unused = store.add("unused", Tensor::row(&[5.0]));
        let mut t = Tape::new();
        let u = t.param(&store, used);
        let _ = t.param(&store, unused);
        let y = t.mul(u, u).unwrap();
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(used).unwrap().data(), &[4.0]);
        assert!(g.get(unused).is_none());
    }
}
