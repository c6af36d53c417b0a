//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Graphs are built per example and discarded after the backward pass.
//! Parameters live in [`ParamSet`]s that a graph borrows; gradients come
//! back as one [`Gradients`] per bound set.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape does not match data");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix::from_vec(1, data.len(), data)
    }

    pub fn scalar(value: f64) -> Self {
        Matrix::from_vec(1, 1, vec![value])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix::from_vec(rows, cols, vec![value; rows * cols])
    }

    /// Uniform entries in `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        Matrix::from_vec(rows, cols, data)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single entry of a 1×1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `out[r] += a[r] · b` for row-major `a` (r×k) and `b` (k×c).
fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    for r in 0..a.rows {
        let out_row = &mut out.data[r * b.cols..(r + 1) * b.cols];
        for (k, &x) in a.row(r).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &w) in out_row.iter_mut().zip(b.row(k)) {
                *o += x * w;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter `{name}` registered twice"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Flat view of every scalar, in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.data.iter().copied()).collect()
    }

    /// Reads or writes scalar `flat` in registration order.
    pub fn scalar_mut(&mut self, mut flat: usize) -> &mut f64 {
        for m in &mut self.values {
            if flat < m.len() {
                return &mut m.data[flat];
            }
            flat -= m.len();
        }
        panic!("scalar index out of range");
    }

    /// Fingerprint of every value, bit for bit, keyed by name so that
    /// storage order does not matter.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut entries: Vec<_> = self.names.iter().zip(&self.values).collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        for (name, m) in entries {
            h.update(name.as_bytes());
            h.update((m.rows as u64).to_le_bytes());
            h.update((m.cols as u64).to_le_bytes());
            for x in &m.data {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Gradients aligned with a [`ParamSet`]; `None` means zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn zeros_like(set: &ParamSet) -> Self {
        Gradients {
            grads: vec![None; set.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let mut scaled = g.clone();
                scaled.scale_in_place(factor);
                self.accumulate(ParamId(i), &scaled);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_in_place(factor);
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.grads.iter().flatten().map(Matrix::sum_squares).sum()
    }

    /// Flat gradient aligned with [`ParamSet::flatten`].
    pub fn flatten(&self, set: &ParamSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(set.num_scalars());
        for (i, (_, _, m)) in set.iter().enumerate() {
            match self.grads.get(i).and_then(Option::as_ref) {
                Some(g) => out.extend_from_slice(&g.data),
                None => out.extend(std::iter::repeat_n(0.0, m.len())),
            }
        }
        out
    }
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a parameter set bound into a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SetHandle(usize);

enum Value {
    Owned(Matrix),
    Param(SetHandle, ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    sets: Vec<&'p ParamSet>,
    nodes: Vec<Node>,
    param_leaves: HashMap<(usize, ParamId), Var>,
}

impl<'p> Default for Graph<'p> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            sets: Vec::new(),
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn bind(&mut self, set: &'p ParamSet) -> SetHandle {
        self.sets.push(set);
        SetHandle(self.sets.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(h, id) => self.sets[h.0].get(*id),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    pub fn param(&mut self, set: SetHandle, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&(set.0, id)) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(set, id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert((set.0, id), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(av.rows, bv.cols);
        matmul_into(av, bv, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`, used for output layers tied to an embedding table.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_t shape mismatch");
        let mut out = Matrix::zeros(av.rows, bv.rows);
        for r in 0..av.rows {
            let ar = av.row(r);
            for c in 0..bv.rows {
                out.data[r * bv.rows + c] = dot(ar, bv.row(c));
            }
        }
        self.push(out, Op::MatMulT(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Concatenates single-row nodes along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows, 1, "concat expects row vectors");
            data.extend_from_slice(&v.data);
        }
        self.push(Matrix::row_vector(data), Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len` of a row vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows, 1, "slice expects a row vector");
        let out = Matrix::row_vector(v.data[start..start + len].to_vec());
        self.push(out, Op::Slice(a, start))
    }

    /// Row `r` of a matrix as a row vector (embedding lookup).
    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let out = Matrix::row_vector(self.value(a).row(r).to_vec());
        self.push(out, Op::Row(a, r))
    }

    /// Selected columns of a row vector.
    pub fn gather(&mut self, a: Var, cols: &[usize]) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows, 1, "gather expects a row vector");
        let out = Matrix::row_vector(cols.iter().map(|&c| v.data[c]).collect());
        self.push(out, Op::Gather(a, cols.to_vec()))
    }

    /// Single entry of a row vector as a 1×1 node.
    pub fn pick(&mut self, a: Var, col: usize) -> Var {
        self.gather(a, &[col])
    }

    /// Log-softmax of a row vector. Entries equal to `-inf` stay `-inf`
    /// and take no part in the normalization.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows, 1, "log_softmax expects a row vector");
        let lse = log_sum_exp(&v.data);
        let out = v.map(|x| x - lse);
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(log_sum_exp(&self.value(a).data));
        self.push(out, Op::LogSumExp(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).data.iter().sum());
        self.push(out, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum_squares());
        self.push(out, Op::SumSquares(a))
    }

    /// Sum of scalar nodes; an empty slice gives a constant zero.
    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        match parts {
            [] => self.scalar(0.0),
            [single] => *single,
            _ => {
                let cat = self.concat(parts);
                self.sum(cat)
            }
        }
    }

    /// Runs the backward pass from scalar `root`.
    pub fn backward(&self, root: Var) -> Backward {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // ga = g · bᵀ
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        let gr = g.row(r);
                        for k in 0..av.cols {
                            ga.data[r * av.cols + k] = dot(gr, bv.row(k));
                        }
                    }
                    // gb = aᵀ · g
                    let mut gb = Matrix::zeros(bv.rows, bv.cols);
                    for r in 0..av.rows {
                        let gr = g.row(r);
                        for (k, &x) in av.row(r).iter().enumerate() {
                            if x != 0.0 {
                                axpy(x, gr, gb.row_mut(k));
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // ga = g · b
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    matmul_into(&g, bv, &mut ga);
                    // gb = gᵀ · a
                    let mut gb = Matrix::zeros(bv.rows, bv.cols);
                    for r in 0..av.rows {
                        let ar = av.row(r);
                        for (c, &gc) in g.row(r).iter().enumerate() {
                            if gc != 0.0 {
                                axpy(gc, ar, gb.row_mut(c));
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, self.value(*b), |g, y| g * y);
                    let gb = elementwise(&g, self.value(*a), |g, x| g * x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, g.map(|x| x * f));
                }
                Op::Sigmoid(a) => {
                    let ga = elementwise(&g, self.value(Var(i)), |g, s| g * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = elementwise(&g, self.value(Var(i)), |g, t| g * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = elementwise(&g, self.value(Var(i)), |g, e| g * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let part = Matrix::row_vector(g.data[offset..offset + n].to_vec());
                        offset += n;
                        accumulate(&mut grads, *p, part);
                    }
                }
                Op::Slice(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    ga.data[*start..*start + g.len()].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Row(a, r) => {
                    let av = self.value(*a);
                    accumulate_row(&mut grads, *a, av.shape(), *r, &g.data);
                }
                Op::Gather(a, cols) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (&c, &gv) in cols.iter().zip(&g.data) {
                        ga.data[c] += gv;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let out = self.value(Var(i));
                    let total: f64 = g
                        .data
                        .iter()
                        .zip(&out.data)
                        .filter(|(_, y)| y.is_finite())
                        .map(|(g, _)| g)
                        .sum();
                    let ga = elementwise(&g, out, |gi, y| {
                        if y.is_finite() {
                            gi - y.exp() * total
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSumExp(a) => {
                    let av = self.value(*a);
                    let lse = self.value(Var(i)).item();
                    let gv = g.item();
                    let ga = av.map(|x| if x.is_finite() { gv * (x - lse).exp() } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads, *a, Matrix::filled(av.rows, av.cols, g.item()));
                }
                Op::SumSquares(a) => {
                    let gv = g.item();
                    let ga = self.value(*a).map(|x| 2.0 * gv * x);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }

        let mut per_set: Vec<Gradients> = self.sets.iter().map(|s| Gradients::zeros_like(s)).collect();
        for (&(set, id), &var) in &self.param_leaves {
            if let Some(Some(g)) = grads.get(var.0) {
                per_set[set].accumulate(id, g);
            }
        }
        Backward { grads, per_set }
    }
}

/// Result of a backward pass.
pub struct Backward {
    grads: Vec<Option<Matrix>>,
    per_set: Vec<Gradients>,
}

impl Backward {
    /// Gradient with respect to a leaf node (constants included).
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self, set: SetHandle) -> &Gradients {
        &self.per_set[set.0]
    }

    pub fn take_params(&mut self, set: SetHandle) -> Gradients {
        std::mem::take(&mut self.per_set[set.0])
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_row(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize), r: usize, g: &[f64]) {
    let slot = &mut grads[v.0];
    let m = slot.get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
    axpy(1.0, g, m.row_mut(r));
}

fn elementwise(g: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
    Matrix::from_vec(g.rows, g.cols, data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(x)`, ignoring `-inf` entries. Returns `-inf` if all are.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized log-probabilities; `-inf` entries stay blocked.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| x - lse).collect()
}
