//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar (1×1) node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every trainable
//! parameter and every explicitly created [`Graph::variable`].
//!
//! Parameters live in a [`ParamStore`] outside the graph; a graph copies each
//! parameter in once ([`Graph::param`] is cached per id), and frozen parameters
//! enter the tape as constants so they never accumulate gradient.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    pub frozen: bool,
}

/// Named, ordered collection of parameter matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.id(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            value,
            frozen: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = true;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    XLogX(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Blend(Var, Var, Vec<f64>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: BTreeMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to a node, `None` if it did not influence the output.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id).and_then(|v| self.grads[v.0].as_ref())
    }

    /// Iterates trainable parameters that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.iter().all(|v| !v.is_nan()),
            "NaN produced by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// A constant input; never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter onto the tape (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, !store.is_frozen(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `a` (n×m) plus the row vector `row` (1×m) added to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a 1×m row");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a` (n×m) with row `i` scaled by `col[i]` (col is n×1).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col).1, 1, "mul_col expects an n×1 column");
        let value = self.value(a) * self.value(col);
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    /// Elementwise `x ln x` with `0 ln 0 = 0`.
    pub fn xlogx(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(xlogx);
        let rg = self.rg(a);
        self.push(value, Op::XLogX(a), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, end), rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start, end), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows col mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).assign(&t.row(id));
        }
        let rg = self.rg(table);
        self.push(value, Op::Gather(table, ids.to_vec()), rg)
    }

    /// Column vector with entry `i` equal to `a[i, ids[i]]`.
    pub fn pick(&mut self, a: Var, ids: &[usize]) -> Var {
        let m = self.value(a);
        assert_eq!(m.nrows(), ids.len());
        let value = Matrix::from_shape_fn((ids.len(), 1), |(i, _)| m[[i, ids[i]]]);
        let rg = self.rg(a);
        self.push(value, Op::Pick(a, ids.to_vec()), rg)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Column sums (1×m).
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row sums (n×1).
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Mean over rows (1×m).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0 as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// Row `i` is `mask[i] * a[i] + (1 - mask[i]) * b[i]`.
    pub fn blend(&mut self, a: Var, b: Var, mask: &[f64]) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim());
        assert_eq!(va.nrows(), mask.len());
        let mut value = vb.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m != 0.0 {
                let mut row = value.row_mut(i);
                row *= 1.0 - m;
                row.scaled_add(m, &va.row(i));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Blend(a, b, mask.to_vec()), rg)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::from_elem((1, 1), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Gradients {
            grads,
            params: self.params.iter().map(|(k, v)| (*k, *v)).collect(),
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*col));
                }
                if self.rg(*col) {
                    let prod = g * self.value(*a);
                    acc(*col, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g * &y.mapv(|s| s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g * &y.mapv(|t| 1.0 - t * t)),
            Op::Exp(a) => acc(*a, g * y),
            Op::Log(a) => acc(*a, g / self.value(*a)),
            Op::XLogX(a) => acc(
                *a,
                g * &self.value(*a).mapv(|x| x.max(1e-300).ln() + 1.0),
            ),
            Op::Softmax(a) => {
                let gy = g * y;
                let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, gy - &(y * &dot));
            }
            Op::LogSoftmax(a) => {
                let soft = y.mapv(f64::exp);
                let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, g - &(soft * &total));
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Matrix::zeros(self.shape(*a));
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start, end) => {
                let mut d = Matrix::zeros(self.shape(*a));
                d.slice_mut(s![*start..*end, ..]).assign(g);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    acc(*p, g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    acc(*p, g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
            }
            Op::Gather(table, ids) => {
                let mut d = Matrix::zeros(self.shape(*table));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = d.row_mut(id);
                    row += &g.row(i);
                }
                acc(*table, d);
            }
            Op::Pick(a, ids) => {
                let mut d = Matrix::zeros(self.shape(*a));
                for (i, &id) in ids.iter().enumerate() {
                    d[[i, id]] += g[[i, 0]];
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Matrix::from_elem(self.shape(*a), g[[0, 0]])),
            Op::SumRows(a) => {
                let (n, m) = self.shape(*a);
                acc(*a, g.broadcast((n, m)).expect("sum_rows grad").to_owned());
            }
            Op::SumCols(a) => {
                let (n, m) = self.shape(*a);
                acc(*a, g.broadcast((n, m)).expect("sum_cols grad").to_owned());
            }
            Op::Blend(a, b, mask) => {
                let col = Matrix::from_shape_fn((mask.len(), 1), |(i, _)| mask[i]);
                if self.rg(*a) {
                    acc(*a, g * &col);
                }
                if self.rg(*b) {
                    acc(*b, g * &col.mapv(|m| 1.0 - m));
                }
            }
        }
    }
}
