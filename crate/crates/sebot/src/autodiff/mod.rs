//! Minimal deterministic reverse-mode autodiff over dense `f64` matrices.
//!
//! A [`Tape`] records every forward operation; [`Tensor2`] is a cheap handle
//! (shape + node index) into it. Calling [`Tape::backward`] on a 1x1 loss
//! fills the gradient of every reachable staged parameter by reverse
//! accumulation; [`Tape::collect_grads`] moves those gradients into the
//! owning [`ParamStore`](params::ParamStore) for an optimizer step.
//!
//! Shape violations and misuse (e.g. running backward twice without a
//! reset) panic with both offending shapes in the message: they are
//! programming errors, not runtime conditions.

mod gradcheck;
mod params;

pub use gradcheck::gradcheck;
pub use params::{
    load_checkpoint, save_checkpoint, AdamWConfig, CheckpointManifest, Init, ParamStore,
};

use std::cell::RefCell;

use rand::Rng;

use crate::matrix::Matrix;

const L2_NORM_EPS: f64 = 1e-12;

/// Handle to one recorded value: shape plus an index into the tape.
/// The value, the gradient accumulator and the operation that produced it
/// all live in the tape node.
#[derive(Clone, Copy, Debug)]
pub struct Tensor2 {
    idx: usize,
    rows: usize,
    cols: usize,
}

impl Tensor2 {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    ScatterAddRows(usize, Vec<usize>),
    /// (matrix, n x 1 weight column)
    ScaleRows(usize, usize),
    /// (n x d matrix, 1 x d row vector broadcast down)
    AddRowVec(usize, usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    RowSoftmax(usize),
    RowLogSoftmax(usize),
    /// Stores the raw (pre-clamp) row norms.
    RowL2Normalize(usize, Vec<f64>),
    /// Mask entries are 0 or 1/(1-p).
    Dropout(usize, Vec<f64>),
    SumAll(usize),
    RowSums(usize),
    ColSums(usize),
    ColMeans(usize),
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

struct TapeInner {
    nodes: Vec<Node>,
    bindings: Vec<(String, usize)>,
    backward_done: bool,
}

/// Recorded computation. One tape per forward/backward pass; create a fresh
/// tape (or `reset`) for every training step.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                bindings: Vec::new(),
                backward_done: false,
            }),
        }
    }

    /// Drop all recorded nodes and bindings, allowing tape reuse.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.bindings.clear();
        inner.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, needs_grad: bool) -> Tensor2 {
        let mut inner = self.inner.borrow_mut();
        assert!(
            !inner.backward_done,
            "cannot record on a tape after backward; reset it first"
        );
        let (rows, cols) = value.shape();
        inner.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Tensor2 {
            idx: inner.nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn needs(&self, idx: usize) -> bool {
        self.inner.borrow().nodes[idx].needs_grad
    }

    /// Record a value that gradients do not flow into.
    pub fn constant(&self, value: Matrix) -> Tensor2 {
        self.push(value, Op::Leaf, false)
    }

    /// Stage a named parameter from the store as a gradient-tracked leaf.
    pub fn param(&self, store: &params::ParamStore, name: &str) -> Tensor2 {
        let value = store.value(name).clone();
        let t = self.push(value, Op::Leaf, true);
        self.inner
            .borrow_mut()
            .bindings
            .push((name.to_string(), t.idx));
        t
    }

    /// Clone of the forward value.
    pub fn value(&self, t: Tensor2) -> Matrix {
        self.inner.borrow().nodes[t.idx].value.clone()
    }

    pub fn scalar(&self, t: Tensor2) -> f64 {
        assert_eq!(t.shape(), (1, 1), "scalar() on a {}x{} tensor", t.rows, t.cols);
        self.inner.borrow().nodes[t.idx].value.get(0, 0)
    }

    /// Gradient of a node after backward; zeros if the loss never reached it.
    pub fn grad(&self, t: Tensor2) -> Matrix {
        let inner = self.inner.borrow();
        assert!(inner.backward_done, "grad() before backward");
        inner.nodes[t.idx]
            .grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(t.rows, t.cols))
    }

    // ----- binary ops -----

    pub fn matmul(&self, a: Tensor2, b: Tensor2) -> Tensor2 {
        assert_eq!(
            a.cols, b.rows,
            "matmul shape mismatch: lhs {}x{}, rhs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        );
        let value = {
            let inner = self.inner.borrow();
            inner.nodes[a.idx].value.matmul(&inner.nodes[b.idx].value)
        };
        let needs = self.needs(a.idx) || self.needs(b.idx);
        self.push(value, Op::MatMul(a.idx, b.idx), needs)
    }

    pub fn add(&self, a: Tensor2, b: Tensor2) -> Tensor2 {
        assert_eq!(
            a.shape(),
            b.shape(),
            "add shape mismatch: lhs {}x{}, rhs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let value = {
            let inner = self.inner.borrow();
            inner.nodes[a.idx].value.add(&inner.nodes[b.idx].value)
        };
        let needs = self.needs(a.idx) || self.needs(b.idx);
        self.push(value, Op::Add(a.idx, b.idx), needs)
    }

    pub fn sub(&self, a: Tensor2, b: Tensor2) -> Tensor2 {
        assert_eq!(
            a.shape(),
            b.shape(),
            "sub shape mismatch: lhs {}x{}, rhs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let value = {
            let inner = self.inner.borrow();
            inner.nodes[a.idx].value.sub(&inner.nodes[b.idx].value)
        };
        let needs = self.needs(a.idx) || self.needs(b.idx);
        self.push(value, Op::Sub(a.idx, b.idx), needs)
    }

    pub fn hadamard(&self, a: Tensor2, b: Tensor2) -> Tensor2 {
        assert_eq!(
            a.shape(),
            b.shape(),
            "hadamard shape mismatch: lhs {}x{}, rhs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let value = {
            let inner = self.inner.borrow();
            inner.nodes[a.idx].value.hadamard(&inner.nodes[b.idx].value)
        };
        let needs = self.needs(a.idx) || self.needs(b.idx);
        self.push(value, Op::Hadamard(a.idx, b.idx), needs)
    }

    /// Elementwise `a / b`.
    pub fn div(&self, a: Tensor2, b: Tensor2) -> Tensor2 {
        assert_eq!(
            a.shape(),
            b.shape(),
            "div shape mismatch: lhs {}x{}, rhs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let bv = &inner.nodes[b.idx].value;
            Matrix::from_vec(
                a.rows,
                a.cols,
                av.data().iter().zip(bv.data()).map(|(x, y)| x / y).collect(),
            )
        };
        let needs = self.needs(a.idx) || self.needs(b.idx);
        self.push(value, Op::Div(a.idx, b.idx), needs)
    }

    /// Scale each row of `a` by the matching entry of the `n x 1` column `w`.
    pub fn scale_rows(&self, a: Tensor2, w: Tensor2) -> Tensor2 {
        assert!(
            w.cols == 1 && w.rows == a.rows,
            "scale_rows shape mismatch: matrix {}x{}, weights {}x{}",
            a.rows,
            a.cols,
            w.rows,
            w.cols
        );
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let wv = &inner.nodes[w.idx].value;
            Matrix::from_fn(a.rows, a.cols, |i, j| av.get(i, j) * wv.get(i, 0))
        };
        let needs = self.needs(a.idx) || self.needs(w.idx);
        self.push(value, Op::ScaleRows(a.idx, w.idx), needs)
    }

    /// Broadcast-add a `1 x d` row vector to every row of `a`.
    pub fn add_row_vec(&self, a: Tensor2, b: Tensor2) -> Tensor2 {
        assert!(
            b.rows == 1 && b.cols == a.cols,
            "add_row_vec shape mismatch: matrix {}x{}, row {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let bv = &inner.nodes[b.idx].value;
            Matrix::from_fn(a.rows, a.cols, |i, j| av.get(i, j) + bv.get(0, j))
        };
        let needs = self.needs(a.idx) || self.needs(b.idx);
        self.push(value, Op::AddRowVec(a.idx, b.idx), needs)
    }

    // ----- structural ops -----

    pub fn transpose(&self, a: Tensor2) -> Tensor2 {
        let value = self.inner.borrow().nodes[a.idx].value.transpose();
        let needs = self.needs(a.idx);
        self.push(value, Op::Transpose(a.idx), needs)
    }

    pub fn concat_cols(&self, parts: &[Tensor2]) -> Tensor2 {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = parts[0].rows;
        for p in parts {
            assert_eq!(
                p.rows, rows,
                "concat_cols row mismatch: expected {rows} rows, got {}x{}",
                p.rows, p.cols
            );
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let value = {
            let inner = self.inner.borrow();
            let mut out = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let mut at = 0;
                for p in parts {
                    let src = inner.nodes[p.idx].value.row(i);
                    out.row_mut(i)[at..at + p.cols].copy_from_slice(src);
                    at += p.cols;
                }
            }
            out
        };
        let needs = parts.iter().any(|p| self.needs(p.idx));
        self.push(
            value,
            Op::ConcatCols(parts.iter().map(|p| p.idx).collect()),
            needs,
        )
    }

    pub fn concat_rows(&self, parts: &[Tensor2]) -> Tensor2 {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = parts[0].cols;
        for p in parts {
            assert_eq!(
                p.cols, cols,
                "concat_rows col mismatch: expected {cols} cols, got {}x{}",
                p.rows, p.cols
            );
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let value = {
            let inner = self.inner.borrow();
            let mut out = Matrix::zeros(rows, cols);
            let mut at = 0;
            for p in parts {
                for i in 0..p.rows {
                    out.row_mut(at + i)
                        .copy_from_slice(inner.nodes[p.idx].value.row(i));
                }
                at += p.rows;
            }
            out
        };
        let needs = parts.iter().any(|p| self.needs(p.idx));
        self.push(
            value,
            Op::ConcatRows(parts.iter().map(|p| p.idx).collect()),
            needs,
        )
    }

    pub fn gather_rows(&self, a: Tensor2, indices: &[usize]) -> Tensor2 {
        for &i in indices {
            assert!(i < a.rows, "gather_rows index {i} out of {} rows", a.rows);
        }
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let mut out = Matrix::zeros(indices.len(), a.cols);
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).copy_from_slice(av.row(i));
            }
            out
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::GatherRows(a.idx, indices.to_vec()), needs)
    }

    /// `out[indices[e]] += a[e]` into a zeroed `out_rows x cols` matrix.
    pub fn scatter_add_rows(&self, a: Tensor2, indices: &[usize], out_rows: usize) -> Tensor2 {
        assert_eq!(
            indices.len(),
            a.rows,
            "scatter_add_rows needs one index per row: {} indices for {}x{}",
            indices.len(),
            a.rows,
            a.cols
        );
        for &i in indices {
            assert!(i < out_rows, "scatter index {i} out of {out_rows} rows");
        }
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let mut out = Matrix::zeros(out_rows, a.cols);
            for (r, &i) in indices.iter().enumerate() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(av.row(r)) {
                    *o += x;
                }
            }
            out
        };
        let needs = self.needs(a.idx);
        self.push(
            value,
            Op::ScatterAddRows(a.idx, indices.to_vec()),
            needs,
        )
    }

    // ----- elementwise & reductions -----

    fn unary(&self, a: Tensor2, op: Op, f: impl Fn(f64) -> f64) -> Tensor2 {
        let value = self.inner.borrow().nodes[a.idx].value.map(f);
        let needs = self.needs(a.idx);
        self.push(value, op, needs)
    }

    pub fn scale(&self, a: Tensor2, c: f64) -> Tensor2 {
        self.unary(a, Op::Scale(a.idx, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Tensor2, c: f64) -> Tensor2 {
        self.unary(a, Op::AddScalar(a.idx), |x| x + c)
    }

    pub fn tanh(&self, a: Tensor2) -> Tensor2 {
        self.unary(a, Op::Tanh(a.idx), f64::tanh)
    }

    pub fn relu(&self, a: Tensor2) -> Tensor2 {
        self.unary(a, Op::Relu(a.idx), |x| x.max(0.0))
    }

    pub fn sigmoid(&self, a: Tensor2) -> Tensor2 {
        self.unary(a, Op::Sigmoid(a.idx), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn exp(&self, a: Tensor2) -> Tensor2 {
        self.unary(a, Op::Exp(a.idx), f64::exp)
    }

    pub fn ln(&self, a: Tensor2) -> Tensor2 {
        self.unary(a, Op::Ln(a.idx), f64::ln)
    }

    pub fn row_softmax(&self, a: Tensor2) -> Tensor2 {
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let mut out = Matrix::zeros(a.rows, a.cols);
            for i in 0..a.rows {
                softmax_row(av.row(i), out.row_mut(i));
            }
            out
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::RowSoftmax(a.idx), needs)
    }

    pub fn row_log_softmax(&self, a: Tensor2) -> Tensor2 {
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let mut out = Matrix::zeros(a.rows, a.cols);
            for i in 0..a.rows {
                let row = av.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                    *o = x - lse;
                }
            }
            out
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::RowLogSoftmax(a.idx), needs)
    }

    /// Normalize each row to unit L2 norm; rows with norms below 1e-12 are
    /// scaled by 1e12 instead (treated as a constant scale in backward).
    pub fn row_l2_normalize(&self, a: Tensor2) -> Tensor2 {
        let (value, norms) = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let mut out = Matrix::zeros(a.rows, a.cols);
            let mut norms = Vec::with_capacity(a.rows);
            for i in 0..a.rows {
                let row = av.row(i);
                let raw = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                norms.push(raw);
                let inv = 1.0 / raw.max(L2_NORM_EPS);
                for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                    *o = x * inv;
                }
            }
            (out, norms)
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::RowL2Normalize(a.idx, norms), needs)
    }

    /// Inverted dropout: keep entries with probability `1 - p`, scaling the
    /// kept ones by `1/(1-p)`, so evaluation needs no rescaling. Only used
    /// in training mode; the mask comes from the caller's seeded stream.
    pub fn dropout(&self, a: Tensor2, p: f64, rng: &mut impl Rng) -> Tensor2 {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        if p == 0.0 {
            return a;
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..a.rows * a.cols)
            .map(|_| if rng.random::<f64>() >= p { keep_scale } else { 0.0 })
            .collect();
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            Matrix::from_vec(
                a.rows,
                a.cols,
                av.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
            )
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::Dropout(a.idx, mask), needs)
    }

    pub fn sum_all(&self, a: Tensor2) -> Tensor2 {
        let value = Matrix::from_vec(1, 1, vec![self.inner.borrow().nodes[a.idx].value.sum()]);
        let needs = self.needs(a.idx);
        self.push(value, Op::SumAll(a.idx), needs)
    }

    /// `n x m -> n x 1` row sums.
    pub fn row_sums(&self, a: Tensor2) -> Tensor2 {
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            Matrix::from_fn(a.rows, 1, |i, _| av.row(i).iter().sum())
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::RowSums(a.idx), needs)
    }

    /// `n x m -> 1 x m` column sums.
    pub fn col_sums(&self, a: Tensor2) -> Tensor2 {
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            Matrix::from_fn(1, a.cols, |_, j| (0..a.rows).map(|i| av.get(i, j)).sum())
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::ColSums(a.idx), needs)
    }

    /// `n x m -> 1 x m` column means.
    pub fn col_means(&self, a: Tensor2) -> Tensor2 {
        assert!(a.rows > 0, "col_means of an empty matrix");
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.nodes[a.idx].value;
            let inv = 1.0 / a.rows as f64;
            Matrix::from_fn(1, a.cols, |_, j| {
                (0..a.rows).map(|i| av.get(i, j)).sum::<f64>() * inv
            })
        };
        let needs = self.needs(a.idx);
        self.push(value, Op::ColMeans(a.idx), needs)
    }

    // ----- backward -----

    /// Reverse accumulation from a 1x1 loss node. Every reachable node with
    /// `needs_grad` receives its gradient; unreachable gradients stay zero.
    pub fn backward(&self, loss: Tensor2) {
        assert_eq!(
            loss.shape(),
            (1, 1),
            "backward needs a 1x1 loss, got {}x{}",
            loss.rows,
            loss.cols
        );
        let mut inner = self.inner.borrow_mut();
        assert!(
            !inner.backward_done,
            "backward called twice without resetting the tape"
        );
        assert!(loss.idx < inner.nodes.len(), "loss is not on this tape");
        inner.backward_done = true;

        let n = inner.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.idx] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        let nodes = &inner.nodes;
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            backprop_node(nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.into_iter().enumerate() {
            inner.nodes[i].grad = g;
        }
    }

    /// Accumulate staged-parameter gradients into the store.
    pub fn collect_grads(&self, store: &mut params::ParamStore) {
        let inner = self.inner.borrow();
        assert!(inner.backward_done, "collect_grads before backward");
        for (name, idx) in &inner.bindings {
            let node = &inner.nodes[*idx];
            match &node.grad {
                Some(g) => store.accumulate_grad(name, g),
                None => {} // unreachable parameter keeps its zero gradient
            }
        }
    }

    /// Gradient for a staged parameter by name (summed over stagings).
    pub fn param_grad(&self, store: &params::ParamStore, name: &str) -> Matrix {
        let inner = self.inner.borrow();
        assert!(inner.backward_done, "param_grad before backward");
        let (rows, cols) = {
            let v = store.value(name);
            (v.rows(), v.cols())
        };
        let mut acc = Matrix::zeros(rows, cols);
        for (bound, idx) in &inner.bindings {
            if bound == name {
                if let Some(g) = &inner.nodes[*idx].grad {
                    acc.add_assign(g);
                }
            }
        }
        acc
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn accum(grads: &mut [Option<Matrix>], nodes: &[Node], idx: usize, delta: Matrix) {
    if !nodes[idx].needs_grad {
        return;
    }
    match &mut grads[idx] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn backprop_node(nodes: &[Node], i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].needs_grad {
                accum(grads, nodes, *a, g.matmul_nt(bv));
            }
            if nodes[*b].needs_grad {
                accum(grads, nodes, *b, av.matmul_tn(g));
            }
        }
        Op::Transpose(a) => accum(grads, nodes, *a, g.transpose()),
        Op::Add(a, b) => {
            accum(grads, nodes, *a, g.clone());
            accum(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accum(grads, nodes, *a, g.clone());
            accum(grads, nodes, *b, g.scale(-1.0));
        }
        Op::Hadamard(a, b) => {
            accum(grads, nodes, *a, g.hadamard(&nodes[*b].value));
            accum(grads, nodes, *b, g.hadamard(&nodes[*a].value));
        }
        Op::Div(a, b) => {
            let bv = &nodes[*b].value;
            let da = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data().iter().zip(bv.data()).map(|(x, y)| x / y).collect(),
            );
            accum(grads, nodes, *a, da);
            let av = &nodes[*a].value;
            let db = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data()
                    .iter()
                    .zip(av.data())
                    .zip(bv.data())
                    .map(|((x, n), d)| -x * n / (d * d))
                    .collect(),
            );
            accum(grads, nodes, *b, db);
        }
        Op::Scale(a, c) => accum(grads, nodes, *a, g.scale(*c)),
        Op::AddScalar(a) => accum(grads, nodes, *a, g.clone()),
        Op::ConcatCols(parts) => {
            let mut at = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                let rows = nodes[p].value.rows();
                let part = Matrix::from_fn(rows, w, |i, j| g.get(i, at + j));
                accum(grads, nodes, p, part);
                at += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut at = 0;
            for &p in parts {
                let h = nodes[p].value.rows();
                let cols = nodes[p].value.cols();
                let part = Matrix::from_fn(h, cols, |i, j| g.get(at + i, j));
                accum(grads, nodes, p, part);
                at += h;
            }
        }
        Op::GatherRows(a, indices) => {
            let av = &nodes[*a].value;
            let mut da = Matrix::zeros(av.rows(), av.cols());
            for (r, &i) in indices.iter().enumerate() {
                for (o, &x) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                    *o += x;
                }
            }
            accum(grads, nodes, *a, da);
        }
        Op::ScatterAddRows(a, indices) => {
            let av = &nodes[*a].value;
            let mut da = Matrix::zeros(av.rows(), av.cols());
            for (r, &i) in indices.iter().enumerate() {
                da.row_mut(r).copy_from_slice(g.row(i));
            }
            accum(grads, nodes, *a, da);
        }
        Op::ScaleRows(a, w) => {
            let (av, wv) = (&nodes[*a].value, &nodes[*w].value);
            let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| g.get(i, j) * wv.get(i, 0));
            accum(grads, nodes, *a, da);
            let dw = Matrix::from_fn(av.rows(), 1, |i, _| {
                g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum()
            });
            accum(grads, nodes, *w, dw);
        }
        Op::AddRowVec(a, b) => {
            accum(grads, nodes, *a, g.clone());
            let db = Matrix::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
            accum(grads, nodes, *b, db);
        }
        Op::Tanh(a) => {
            let y = &nodes[i].value;
            let da = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data()
                    .iter()
                    .zip(y.data())
                    .map(|(x, t)| x * (1.0 - t * t))
                    .collect(),
            );
            accum(grads, nodes, *a, da);
        }
        Op::Relu(a) => {
            let y = &nodes[i].value;
            let da = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data()
                    .iter()
                    .zip(y.data())
                    .map(|(x, t)| if *t > 0.0 { *x } else { 0.0 })
                    .collect(),
            );
            accum(grads, nodes, *a, da);
        }
        Op::Sigmoid(a) => {
            let y = &nodes[i].value;
            let da = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data()
                    .iter()
                    .zip(y.data())
                    .map(|(x, s)| x * s * (1.0 - s))
                    .collect(),
            );
            accum(grads, nodes, *a, da);
        }
        Op::Exp(a) => {
            accum(grads, nodes, *a, g.hadamard(&nodes[i].value));
        }
        Op::Ln(a) => {
            let av = &nodes[*a].value;
            let da = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data().iter().zip(av.data()).map(|(x, y)| x / y).collect(),
            );
            accum(grads, nodes, *a, da);
        }
        Op::RowSoftmax(a) => {
            let y = &nodes[i].value;
            let mut da = Matrix::zeros(g.rows(), g.cols());
            for r in 0..g.rows() {
                let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, s)| x * s).sum();
                for ((o, &gx), &s) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                    *o = s * (gx - dot);
                }
            }
            accum(grads, nodes, *a, da);
        }
        Op::RowLogSoftmax(a) => {
            let y = &nodes[i].value;
            let mut da = Matrix::zeros(g.rows(), g.cols());
            for r in 0..g.rows() {
                let gsum: f64 = g.row(r).iter().sum();
                for ((o, &gx), &ly) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                    *o = gx - ly.exp() * gsum;
                }
            }
            accum(grads, nodes, *a, da);
        }
        Op::RowL2Normalize(a, norms) => {
            let y = &nodes[i].value;
            let mut da = Matrix::zeros(g.rows(), g.cols());
            for r in 0..g.rows() {
                let raw = norms[r];
                if raw < L2_NORM_EPS {
                    let inv = 1.0 / L2_NORM_EPS;
                    for (o, &gx) in da.row_mut(r).iter_mut().zip(g.row(r)) {
                        *o = gx * inv;
                    }
                } else {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, u)| x * u).sum();
                    for ((o, &gx), &u) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = (gx - u * dot) / raw;
                    }
                }
            }
            accum(grads, nodes, *a, da);
        }
        Op::Dropout(a, mask) => {
            let da = Matrix::from_vec(
                g.rows(),
                g.cols(),
                g.data().iter().zip(mask).map(|(x, m)| x * m).collect(),
            );
            accum(grads, nodes, *a, da);
        }
        Op::SumAll(a) => {
            let av = &nodes[*a].value;
            let s = g.get(0, 0);
            accum(grads, nodes, *a, Matrix::filled(av.rows(), av.cols(), s));
        }
        Op::RowSums(a) => {
            let av = &nodes[*a].value;
            let da = Matrix::from_fn(av.rows(), av.cols(), |r, _| g.get(r, 0));
            accum(grads, nodes, *a, da);
        }
        Op::ColSums(a) => {
            let av = &nodes[*a].value;
            let da = Matrix::from_fn(av.rows(), av.cols(), |_, c| g.get(0, c));
            accum(grads, nodes, *a, da);
        }
        Op::ColMeans(a) => {
            let av = &nodes[*a].value;
            let inv = 1.0 / av.rows() as f64;
            let da = Matrix::from_fn(av.rows(), av.cols(), |_, c| g.get(0, c) * inv);
            accum(grads, nodes, *a, da);
        }
    }
}

#[cfg(test)]
mod tests;
