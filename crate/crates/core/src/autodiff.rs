//! Dense tensors and a single-use reverse-mode tape.
//!
//! Every operation works on row-major tensors of rank 0, 1 or 2. Rank-2
//! tensors are treated as a batch of rows, so a whole minibatch (or a whole
//! pair set) flows through one tape node per layer instead of one node per
//! sample. A rank-1 tensor behaves like a batch with a single row.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid target for {op}: {reason}")]
    InvalidTarget { op: &'static str, reason: String },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("tape was already consumed by a backward pass")]
    TapeConsumed,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(AutodiffError::InvalidTensor(format!("shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be nonempty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| AutodiffError::InvalidTensor("no rows".into()))?;
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(AutodiffError::Dimension {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows when viewed as a batch (1 for scalars and vectors).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Row width when viewed as a batch.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the listed rows into a new rank-2 tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), c],
            data,
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Constant,
    /// `x · wᵀ`, row by row.
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Div(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    RowNorms(Var),
    Sum(Var),
    SumSquares(Var),
    Mse(Var, Var),
    /// Softmax probabilities per row live in `Node::aux`.
    CrossEntropy(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    aux: Vec<f64>,
}

/// Adjoints of the tracked leaves after a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for constants and for nodes that are not leaves.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.adjoints.get(var.0).and_then(|a| a.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.adjoints.get_mut(var.0).and_then(|a| a.take())
    }
}

/// Single-use record of a computation. One call to [`Tape::backward`]
/// consumes it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    zero_norm_subgradients: usize,
}

fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_in_place(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = sigmoid_scalar(*v);
    }
}

pub(crate) fn relu_in_place(values: &mut [f64]) {
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `y = x · wᵀ` for row-major `x: rows×inner`, `w: out×inner`.
pub(crate) fn gemm_nt(x: &[f64], rows: usize, inner: usize, w: &[f64], out: usize, y: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(w.len(), out * inner);
    debug_assert_eq!(y.len(), rows * out);
    // SAFETY: slice lengths match the strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            out,
            1.0,
            x.as_ptr(),
            inner as isize,
            1,
            w.as_ptr(),
            1,
            inner as isize,
            0.0,
            y.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

/// `dx += dy · w` for `dy: rows×out`, `w: out×inner`.
fn gemm_nn_acc(dy: &[f64], rows: usize, out: usize, w: &[f64], inner: usize, dx: &mut [f64]) {
    // SAFETY: slice lengths match the strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            out,
            inner,
            1.0,
            dy.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inner as isize,
            1,
            1.0,
            dx.as_mut_ptr(),
            inner as isize,
            1,
        );
    }
}

/// `dw += dyᵀ · x` for `dy: rows×out`, `x: rows×inner`.
fn gemm_tn_acc(dy: &[f64], rows: usize, out: usize, x: &[f64], inner: usize, dw: &mut [f64]) {
    // SAFETY: slice lengths match the strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            out,
            rows,
            inner,
            1.0,
            dy.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inner as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            inner as isize,
            1,
        );
    }
}

fn check_target(op: &'static str, target: &Tensor) -> Result<()> {
    for r in 0..target.rows() {
        let row = target.row(r);
        if row.iter().any(|&t| t < 0.0 || !t.is_finite()) {
            return Err(AutodiffError::InvalidTarget {
                op,
                reason: format!("row {r} has a negative or non-finite entry"),
            });
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(AutodiffError::InvalidTarget {
                op,
                reason: format!("row {r} sums to {s}, expected 1"),
            });
        }
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn grad2(&self, a: Var, b: Var) -> bool {
        self.node(a).requires_grad || self.node(b).requires_grad
    }

    /// Tracked leaf: receives an adjoint on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf: never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of Euclidean norms differentiated at the origin, where the
    /// zero subgradient was used.
    pub fn zero_norm_subgradients(&self) -> usize {
        self.zero_norm_subgradients
    }

    /// Matrix-vector product `w · x`; `x` may also be a batch of rows.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.linear(x, w)
    }

    /// Row-wise `x · wᵀ` for `x` of shape `[n, in]` (or `[in]`) and `w` of
    /// shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.rank() == 0 || xv.cols() != wv.shape()[1] {
            return Err(AutodiffError::Dimension {
                op: "matvec",
                lhs: wv.shape().to_vec(),
                rhs: xv.shape().to_vec(),
            });
        }
        let (rows, inner, out) = (xv.rows(), xv.cols(), wv.shape()[0]);
        let mut y = vec![0.0; rows * out];
        gemm_nt(xv.data(), rows, inner, wv.data(), out, &mut y);
        let shape = if xv.rank() == 1 { vec![out] } else { vec![rows, out] };
        let rg = self.grad2(x, w);
        Ok(self.push(Tensor { shape, data: y }, Op::MatMulNt(x, w), rg))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, z: Var, b: Var) -> Result<Var> {
        let (zv, bv) = (self.value(z), self.value(b));
        if bv.rank() != 1 || zv.rank() == 0 || zv.cols() != bv.len() {
            return Err(AutodiffError::Dimension {
                op: "add_bias",
                lhs: zv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = zv.clone();
        let c = bv.len();
        for (i, v) in out.data.iter_mut().enumerate() {
            *v += bv.data[i % c];
        }
        let rg = self.grad2(z, b);
        Ok(self.push(out, Op::AddBias(z, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::Dimension {
                op,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        let rg = self.grad2(a, b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        Ok(self.zip(a, b, Op::Div(a, b), |x, y| x / y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|v| *v *= c);
        let rg = self.node(a).requires_grad;
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn sigmoid(&mut self, z: Var) -> Var {
        let mut value = self.value(z).clone();
        sigmoid_in_place(&mut value.data);
        let rg = self.node(z).requires_grad;
        self.push(value, Op::Sigmoid(z), rg)
    }

    pub fn relu(&mut self, z: Var) -> Var {
        let mut value = self.value(z).clone();
        relu_in_place(&mut value.data);
        let rg = self.node(z).requires_grad;
        self.push(value, Op::Relu(z), rg)
    }

    /// Euclidean norm of every row: `[n, m] -> [n]`, `[m] -> []`.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms: Vec<f64> = (0..av.rows())
            .map(|r| av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = if av.rank() == 2 {
            Tensor {
                shape: vec![av.rows()],
                data: norms,
            }
        } else {
            Tensor::scalar(norms[0])
        };
        let rg = self.node(a).requires_grad;
        self.push(value, Op::RowNorms(a), rg)
    }

    /// Euclidean norm of a vector. Alias of [`Tape::row_norms`] on rank 1.
    pub fn euclidean_norm(&mut self, v: Var) -> Result<Var> {
        if self.value(v).rank() != 1 {
            return Err(AutodiffError::Dimension {
                op: "euclidean_norm",
                lhs: self.value(v).shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(self.row_norms(v))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.node(a).requires_grad;
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().map(|v| v * v).sum();
        let rg = self.node(a).requires_grad;
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Squared Euclidean error per row, averaged over rows.
    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", prediction, target)?;
        let (p, t) = (self.value(prediction), self.value(target));
        let rows = p.rows() as f64;
        let s: f64 = p.data.iter().zip(&t.data).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.grad2(prediction, target);
        Ok(self.push(Tensor::scalar(s / rows), Op::Mse(prediction, target), rg))
    }

    /// Softmax cross-entropy from logits, averaged over rows. Targets must be
    /// probability vectors (one-hot in practice).
    pub fn cross_entropy(&mut self, logits: Var, target: Var) -> Result<Var> {
        self.same_shape("cross_entropy", logits, target)?;
        let (z, t) = (self.value(logits), self.value(target));
        check_target("cross_entropy", t)?;
        let (rows, cols) = (z.rows(), z.cols());
        let mut probs = vec![0.0; rows * cols];
        let mut total = 0.0;
        for r in 0..rows {
            let zr = z.row(r);
            let tr = t.row(r);
            let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (p, &zi) in probs[r * cols..(r + 1) * cols].iter_mut().zip(zr) {
                *p = (zi - m).exp();
                s += *p;
            }
            let lse = m + s.ln();
            for p in &mut probs[r * cols..(r + 1) * cols] {
                *p /= s;
            }
            total += zr.iter().zip(tr).map(|(&zi, &ti)| ti * (lse - zi)).sum::<f64>();
        }
        let rg = self.grad2(logits, target);
        let v = self.push(Tensor::scalar(total / rows as f64), Op::CrossEntropy(logits, target), rg);
        self.nodes[v.0].aux = probs;
        Ok(v)
    }

    /// Reverse sweep from a scalar output. Consumes the tape.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let out = self.value(output);
        if out.len() != 1 || out.rank() > 1 {
            return Err(AutodiffError::NonScalarOutput(out.shape().to_vec()));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match self.nodes[i].op {
                Op::Leaf => {
                    adj[i] = Some(g);
                }
                Op::Constant => {}
                op => self.propagate(op, i, &g, &mut adj),
            }
        }

        let adjoints = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| match node.op {
                Op::Leaf => Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: adj[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { adjoints })
    }

    fn propagate(&mut self, op: Op, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;

        match op {
            Op::Leaf | Op::Constant => unreachable!(),
            Op::MatMulNt(x, w) => {
                let (xv, wv) = (val(x), val(w));
                let (rows, inner, out) = (xv.rows(), xv.cols(), wv.shape()[0]);
                if wants(x) {
                    gemm_nn_acc(g, rows, out, wv.data(), inner, slot(adj, x, xv.len()));
                }
                if wants(w) {
                    gemm_tn_acc(g, rows, out, xv.data(), inner, slot(adj, w, wv.len()));
                }
            }
            Op::AddBias(z, b) => {
                if wants(z) {
                    let dz = slot(adj, z, g.len());
                    dz.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if wants(b) {
                    let c = val(b).len();
                    let db = slot(adj, b, c);
                    for (k, gi) in g.iter().enumerate() {
                        db[k % c] += gi;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(a) {
                    let da = slot(adj, a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if wants(b) {
                    let db = slot(adj, b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += sign * gi);
                }
            }
            Op::Scale(a, c) => {
                let da = slot(adj, a, g.len());
                da.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi);
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a).data.clone(), val(b).data.clone());
                if wants(a) {
                    let da = slot(adj, a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] / bv[k];
                    }
                }
                if wants(b) {
                    let db = slot(adj, b, g.len());
                    for k in 0..g.len() {
                        db[k] -= g[k] * av[k] / (bv[k] * bv[k]);
                    }
                }
            }
            Op::Sigmoid(z) => {
                let s = &nodes[i].value.data;
                let dz: Vec<f64> = g.iter().zip(s).map(|(gi, si)| gi * si * (1.0 - si)).collect();
                let slot = slot(adj, z, g.len());
                slot.iter_mut().zip(dz).for_each(|(d, v)| *d += v);
            }
            Op::Relu(z) => {
                let zin: Vec<bool> = val(z).data.iter().map(|&v| v > 0.0).collect();
                let slot = slot(adj, z, g.len());
                for k in 0..g.len() {
                    if zin[k] {
                        slot[k] += g[k];
                    }
                }
            }
            Op::RowNorms(a) => {
                let av = val(a);
                let cols = av.cols();
                let norms = nodes[i].value.data.clone();
                let input = av.data.clone();
                let da = slot(adj, a, input.len());
                for (r, (&nrm, &gr)) in norms.iter().zip(g).enumerate() {
                    if nrm == 0.0 {
                        self.zero_norm_subgradients += 1;
                        continue;
                    }
                    let k = gr / nrm;
                    for c in 0..cols {
                        da[r * cols + c] += k * input[r * cols + c];
                    }
                }
            }
            Op::Sum(a) => {
                let da = slot(adj, a, val(a).len());
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SumSquares(a) => {
                let av = val(a).data.clone();
                let da = slot(adj, a, av.len());
                da.iter_mut().zip(av).for_each(|(d, v)| *d += 2.0 * v * g[0]);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (val(p), val(t));
                let k = 2.0 * g[0] / pv.rows() as f64;
                let diff: Vec<f64> = pv.data.iter().zip(&tv.data).map(|(a, b)| k * (a - b)).collect();
                if wants(p) {
                    let dp = slot(adj, p, diff.len());
                    dp.iter_mut().zip(&diff).for_each(|(d, v)| *d += v);
                }
                if wants(t) {
                    let dt = slot(adj, t, diff.len());
                    dt.iter_mut().zip(&diff).for_each(|(d, v)| *d -= v);
                }
            }
            Op::CrossEntropy(z, t) => {
                let (zv, tv) = (val(z), val(t));
                let (rows, cols) = (zv.rows(), zv.cols());
                let k = g[0] / rows as f64;
                let probs = &nodes[i].aux;
                if wants(z) {
                    let mut dzv = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let tr = tv.row(r);
                        let mass: f64 = tr.iter().sum();
                        for c in 0..cols {
                            dzv[r * cols + c] = k * (probs[r * cols + c] * mass - tr[c]);
                        }
                    }
                    let dz = slot(adj, z, dzv.len());
                    dz.iter_mut().zip(dzv).for_each(|(d, v)| *d += v);
                }
                if wants(t) {
                    let mut dtv = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let zr = zv.row(r);
                        let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = m + zr.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                        for c in 0..cols {
                            dtv[r * cols + c] = k * (lse - zr[c]);
                        }
                    }
                    let dt = slot(adj, t, dtv.len());
                    dt.iter_mut().zip(dtv).for_each(|(d, v)| *d += v);
                }
            }
        }
    }
}
