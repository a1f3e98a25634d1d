//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation records its inputs on a [`Graph`]; [`Graph::backward`]
//! walks the records in reverse and applies each operation's hand-written
//! adjoint. Nodes built only from constants never receive gradients, so a
//! graph built without parameters doubles as a plain evaluator.

use crate::hmm;
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    SoftClamp(Var, f64),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    ShiftRows(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    HmmFilter { emit: Var, trans: Var, init: Var },
    LocalAttention { q: Var, k: Var, v: Var, heads: usize, weights: AttentionWeights },
    AnalysisMatrix { filter: Var, n: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-step, per-head attention weights recorded by [`Graph::local_attention`].
#[derive(Clone, Debug, Default)]
pub struct AttentionWeights {
    pub heads: usize,
    /// Offset of step `t`'s first weight; step `t` holds `heads × window_len(t)` values.
    pub offsets: Vec<usize>,
    pub starts: Vec<usize>,
    pub values: Vec<f64>,
}

impl AttentionWeights {
    /// Weights of `head` at step `t` over keys `starts[t]..=t`.
    pub fn step(&self, t: usize, head: usize) -> &[f64] {
        let len = t - self.starts[t] + 1;
        let base = self.offsets[t] + head * len;
        &self.values[base..base + len]
    }
}

/// Gradients indexed by graph variable.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(0, 0))
    }

    pub fn attention_weights(&self, v: Var) -> Option<&AttentionWeights> {
        match &self.nodes[v.0].op {
            Op::LocalAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// `a (n×q) + b (1×q)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        debug_assert_eq!(bv.cols(), self.value(a).cols());
        let mut out = self.value(a).clone();
        let q = out.cols();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(&bv.data()[..q]) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    /// `a (n×q) ∘ r (1×q)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let rv = self.value(r).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (o, x) in out.row_mut(i).iter_mut().zip(&rv) {
                *o *= x;
            }
        }
        self.push(out, Op::MulRow(a, r), &[a, r])
    }

    /// `a (n×q) ∘ c (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let cv = self.value(c).data().to_vec();
        let mut out = self.value(a).clone();
        for (i, &s) in cv.iter().enumerate() {
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(a, c), &[a, c])
    }

    /// `a (n×q) / c (n×1)` broadcast over columns.
    pub fn div_col(&mut self, a: Var, c: Var) -> Var {
        let cv = self.value(c).data().to_vec();
        let mut out = self.value(a).clone();
        for (i, &s) in cv.iter().enumerate() {
            for o in out.row_mut(i) {
                *o /= s;
            }
        }
        self.push(out, Op::DivCol(a, c), &[a, c])
    }

    /// `a · s` for a `1×1` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let out = self.value(a).map(|x| x * sv);
        self.push(out, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(crate::numerics::sigmoid_scalar);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(crate::numerics::softplus);
        self.push(out, Op::Softplus(a), &[a])
    }

    /// `bound · tanh(a / bound)`: smooth clamp into `(-bound, bound)`.
    pub fn soft_clamp(&mut self, a: Var, bound: f64) -> Var {
        let out = self.value(a).map(|x| bound * (x / bound).tanh());
        self.push(out, Op::SoftClamp(a, bound), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    /// Column sums, `n×q → 1×q`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SumRows(a), &[a])
    }

    /// Row sums, `n×q → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::col_vector((0..av.rows()).map(|r| av.row(r).iter().sum()).collect());
        self.push(out, Op::SumCols(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            debug_assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            let c = pv.cols();
            for r in 0..rows {
                out.row_mut(r)[off..off + c].copy_from_slice(pv.row(r));
            }
            off += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec()).expect("slice_rows");
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for p in parts {
            debug_assert_eq!(self.value(*p).cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data).expect("concat_rows");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols).expect("reshape");
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Row `t` of the result is row `t - lag` of `a`, zeros for `t < lag`.
    pub fn shift_rows(&mut self, a: Var, lag: usize) -> Var {
        let av = self.value(a);
        let (n, c) = av.shape();
        let mut out = Tensor::zeros(n, c);
        if lag < n {
            out.data_mut()[lag * c..].copy_from_slice(&av.data()[..(n - lag) * c]);
        }
        self.push(out, Op::ShiftRows(a, lag), &[a])
    }

    /// Row `r` of the result is row `idx[r]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<Option<usize>>) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Tensor::zeros(idx.len(), c);
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = i {
                out.row_mut(r).copy_from_slice(av.row(*i));
            }
        }
        self.push(out, Op::GatherRows(a, idx.clone()), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..av.rows() {
            let lse = crate::numerics::logsumexp(av.row(r));
            for o in out.row_mut(r) {
                *o -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a), &[a])
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::col_vector((0..av.rows()).map(|r| crate::numerics::logsumexp(av.row(r))).collect());
        self.push(out, Op::LogSumExpRows(a), &[a])
    }

    /// Scaled forward recursion of an HMM with per-step transitions.
    ///
    /// `emit` is `T×K` log-emissions, `trans` is `T×K²` row-major log
    /// transition matrices (row 0 unused), `init` is `1×K` log initial
    /// probabilities. The result is `T×(K+1)`: log filtered posteriors
    /// followed by the per-step log normalizer.
    pub fn hmm_filter(&mut self, emit: Var, trans: Var, init: Var) -> Var {
        let out = hmm::log_filter_table(self.value(emit), self.value(trans), self.value(init));
        self.push(out, Op::HmmFilter { emit, trans, init }, &[emit, trans, init])
    }

    /// Causal multi-head scaled dot-product attention with one query per step
    /// over keys in `[t - lookback, t]`.
    pub fn local_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, lookback: usize) -> Var {
        let (out, weights) =
            local_attention_forward(self.value(q), self.value(k), self.value(v), heads, lookback);
        self.push(out, Op::LocalAttention { q, k, v, heads, weights }, &[q, k, v])
    }

    /// `n × n/2` periodic analysis matrix `M[(2j+1-i) mod n, j] += filter[i]`,
    /// so that a row signal `x` filtered and downsampled by two is `x · M`.
    pub fn analysis_matrix(&mut self, filter: Var, n: usize) -> Var {
        let out = analysis_matrix_value(self.value(filter).data(), n);
        self.push(out, Op::AnalysisMatrix { filter, n }, &[filter])
    }

    /// Reverse sweep from the `1×1` node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        assert_eq!(self.value(loss).shape(), (1, 1), "backward expects a scalar loss");
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.apply_adjoint(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn apply_adjoint(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.needs(*b) {
                    acc(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, col_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let rv = self.value(*r);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= x;
                        }
                    }
                    acc(grads, *a, ga);
                }
                if self.needs(*r) {
                    acc(grads, *r, col_sums(&g.zip_map(self.value(*a), |x, y| x * y)));
                }
            }
            Op::MulCol(a, c) => {
                let cv = self.value(*c);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for (i, &s) in cv.data().iter().enumerate() {
                        for o in ga.row_mut(i) {
                            *o *= s;
                        }
                    }
                    acc(grads, *a, ga);
                }
                if self.needs(*c) {
                    let av = self.value(*a);
                    let gc = (0..g.rows()).map(|i| dot(g.row(i), av.row(i))).collect();
                    acc(grads, *c, Tensor::col_vector(gc));
                }
            }
            Op::DivCol(a, c) => {
                let cv = self.value(*c);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for (i, &s) in cv.data().iter().enumerate() {
                        for o in ga.row_mut(i) {
                            *o /= s;
                        }
                    }
                    acc(grads, *a, ga);
                }
                if self.needs(*c) {
                    let gc = (0..g.rows()).map(|i| -dot(g.row(i), y.row(i)) / cv.data()[i]).collect();
                    acc(grads, *c, Tensor::col_vector(gc));
                }
            }
            Op::ScaleBy(a, s) => {
                if self.needs(*a) {
                    let sv = self.scalar(*s);
                    acc(grads, *a, g.map(|x| x * sv));
                }
                if self.needs(*s) {
                    acc(grads, *s, Tensor::scalar(dot(g.data(), self.value(*a).data())));
                }
            }
            Op::Scale(a, c) => acc(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Relu(a) => acc(grads, *a, g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Sigmoid(a) => acc(grads, *a, g.zip_map(y, |gx, s| gx * s * (1.0 - s))),
            Op::Tanh(a) => acc(grads, *a, g.zip_map(y, |gx, t| gx * (1.0 - t * t))),
            Op::Exp(a) => acc(grads, *a, g.zip_map(y, |gx, e| gx * e)),
            Op::Log(a) => acc(grads, *a, g.zip_map(self.value(*a), |gx, x| gx / x)),
            Op::Sqrt(a) => acc(grads, *a, g.zip_map(y, |gx, s| 0.5 * gx / s)),
            Op::Square(a) => acc(grads, *a, g.zip_map(self.value(*a), |gx, x| 2.0 * gx * x)),
            Op::Softplus(a) => {
                acc(grads, *a, g.zip_map(self.value(*a), |gx, x| gx * crate::numerics::sigmoid_scalar(x)))
            }
            Op::SoftClamp(a, bound) => {
                let b = *bound;
                acc(grads, *a, g.zip_map(y, |gx, v| gx * (1.0 - (v / b) * (v / b))))
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).copy_from_slice(g.data());
                }
                acc(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).fill(g.data()[i]);
                }
                acc(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                let len = g.cols();
                for i in 0..r {
                    ga.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                }
                acc(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.needs(*p) {
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(grads, *p, gp);
                    }
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.needs(*p) {
                        let gp = Tensor::from_vec(r, c, g.data()[off..off + r * c].to_vec()).expect("concat_rows grad");
                        acc(grads, *p, gp);
                    }
                    off += r * c;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, g.clone().reshaped(r, c).expect("reshape grad"));
            }
            Op::ShiftRows(a, lag) => {
                let (n, c) = self.shape(*a);
                let mut ga = Tensor::zeros(n, c);
                if *lag < n {
                    ga.data_mut()[..(n - lag) * c].copy_from_slice(&g.data()[lag * c..]);
                }
                acc(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (n, c) = self.shape(*a);
                let mut ga = Tensor::zeros(n, c);
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = i {
                        for (o, x) in ga.row_mut(*i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                acc(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (o, ly) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * total;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::LogSumExpRows(a) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let (gr, lse) = (g.data()[r], y.data()[r]);
                    for (o, x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = gr * (x - lse).exp();
                    }
                }
                acc(grads, *a, ga);
            }
            Op::HmmFilter { emit, trans, init } => {
                let (ge, gt, gi) = hmm_filter_adjoint(y, self.value(*trans), self.value(*init), g);
                if self.needs(*emit) {
                    acc(grads, *emit, ge);
                }
                if self.needs(*trans) {
                    acc(grads, *trans, gt);
                }
                if self.needs(*init) {
                    acc(grads, *init, gi);
                }
            }
            Op::LocalAttention { q, k, v, heads, weights } => {
                let (gq, gk, gv) =
                    local_attention_adjoint(self.value(*q), self.value(*k), self.value(*v), *heads, weights, g);
                if self.needs(*q) {
                    acc(grads, *q, gq);
                }
                if self.needs(*k) {
                    acc(grads, *k, gk);
                }
                if self.needs(*v) {
                    acc(grads, *v, gv);
                }
            }
            Op::AnalysisMatrix { filter, n } => {
                let len = self.value(*filter).cols();
                let half = n / 2;
                let mut gf = vec![0.0; len];
                for (i, gfi) in gf.iter_mut().enumerate() {
                    for j in 0..half {
                        let row = (2 * j + 1 + n * len - i) % n;
                        *gfi += g.get(row, j);
                    }
                }
                acc(grads, *filter, Tensor::row_vector(gf));
            }
        }
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

pub(crate) fn analysis_matrix_value(filter: &[f64], n: usize) -> Tensor {
    let half = n / 2;
    let len = filter.len();
    let mut m = Tensor::zeros(n, half);
    for j in 0..half {
        for (i, &h) in filter.iter().enumerate() {
            let row = (2 * j + 1 + n * len - i) % n;
            let cur = m.get(row, j);
            m.set(row, j, cur + h);
        }
    }
    m
}

fn local_attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    lookback: usize,
) -> (Tensor, AttentionWeights) {
    let (t_len, width) = q.shape();
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Tensor::zeros(t_len, width);
    let mut w = AttentionWeights { heads, offsets: Vec::with_capacity(t_len), starts: Vec::with_capacity(t_len), values: Vec::new() };
    let mut scores = Vec::with_capacity(lookback + 1);
    for t in 0..t_len {
        let start = t.saturating_sub(lookback);
        w.offsets.push(w.values.len());
        w.starts.push(start);
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            let qh = &q.row(t)[cols.clone()];
            scores.clear();
            scores.extend((start..=t).map(|s| dot(qh, &k.row(s)[cols.clone()]) * scale));
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for sc in scores.iter_mut() {
                *sc = (*sc - max).exp();
                z += *sc;
            }
            let orow = &mut out.row_mut(t)[cols.clone()];
            for (s, sc) in (start..=t).zip(scores.iter_mut()) {
                *sc /= z;
                for (o, x) in orow.iter_mut().zip(&v.row(s)[cols.clone()]) {
                    *o += *sc * x;
                }
            }
            w.values.extend_from_slice(&scores);
        }
    }
    (out, w)
}

fn local_attention_adjoint(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    weights: &AttentionWeights,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (t_len, width) = q.shape();
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut gq = Tensor::zeros(t_len, width);
    let mut gk = Tensor::zeros(t_len, width);
    let mut gv = Tensor::zeros(t_len, width);
    let mut ga = Vec::new();
    for t in 0..t_len {
        let start = weights.starts[t];
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            let a = weights.step(t, h);
            let go = &g.row(t)[cols.clone()];
            ga.clear();
            for (s, &aw) in (start..=t).zip(a) {
                ga.push(dot(go, &v.row(s)[cols.clone()]));
                for (o, x) in gv.row_mut(s)[cols.clone()].iter_mut().zip(go) {
                    *o += aw * x;
                }
            }
            let mean: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
            for (idx, s) in (start..=t).enumerate() {
                let gs = a[idx] * (ga[idx] - mean) * scale;
                if gs == 0.0 {
                    continue;
                }
                for c in cols.clone() {
                    let qc = q.get(t, c);
                    let kc = k.get(s, c);
                    gq.data_mut()[t * width + c] += gs * kc;
                    gk.data_mut()[s * width + c] += gs * qc;
                }
            }
        }
    }
    (gq, gk, gv)
}

/// Adjoint of the scaled forward recursion given the output table.
fn hmm_filter_adjoint(out: &Tensor, trans: &Tensor, init: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let t_len = out.rows();
    let k = out.cols() - 1;
    let mut ge = Tensor::zeros(t_len, k);
    let mut gt = Tensor::zeros(t_len, k * k);
    let mut gi = Tensor::zeros(1, k);
    // carried gradient w.r.t. log filtered row t
    let mut carry = vec![0.0; k];
    let mut gq = vec![0.0; k];
    let mut pred = vec![0.0; k];
    for t in (0..t_len).rev() {
        let row = out.row(t);
        let grow = g.row(t);
        let gn = grow[k];
        let gf: Vec<f64> = (0..k).map(|j| grow[j] + carry[j]).collect();
        let total: f64 = gf.iter().sum();
        for j in 0..k {
            let s = row[j].exp();
            gq[j] = gf[j] + (gn - total) * s;
        }
        ge.row_mut(t).copy_from_slice(&gq);
        if t == 0 {
            gi.data_mut().copy_from_slice(&gq);
            break;
        }
        let prev = out.row(t - 1);
        let lt = trans.row(t);
        for j in 0..k {
            let col: Vec<f64> = (0..k).map(|i| prev[i] + lt[i * k + j]).collect();
            pred[j] = crate::numerics::logsumexp(&col);
        }
        carry.fill(0.0);
        let gtr = gt.row_mut(t);
        for i in 0..k {
            for j in 0..k {
                let w = (prev[i] + lt[i * k + j] - pred[j]).exp();
                let c = gq[j] * w;
                gtr[i * k + j] = c;
                carry[i] += c;
            }
        }
    }
    let _ = init;
    (ge, gt, gi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::rng::SeededRng;

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Gradient of `build` (a scalar function of one parameter tensor) via the
    /// tape, compared against central differences.
    fn check(shape: (usize, usize), seed: u64, build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
        let mut rng = SeededRng::new(seed);
        let theta = random(&mut rng, shape.0, shape.1);
        let mut g = Graph::new();
        let p = g.param(theta.clone());
        let loss = build(&mut g, p);
        let grads = g.backward(loss);
        let analytic = grads.get(p).unwrap().data().to_vec();
        let f = |x: &[f64]| {
            let mut g = Graph::new();
            let p = g.constant(Tensor::from_vec(shape.0, shape.1, x.to_vec()).unwrap());
            let l = build(&mut g, p);
            g.scalar(l)
        };
        grad_check(f, theta.data(), &analytic, 1e-5).unwrap().max_rel_err
    }

    #[test]
    fn elementwise_and_broadcast_adjoints() {
        let err = check((3, 4), 1, |g, p| {
            let a = g.tanh(p);
            let b = g.sigmoid(p);
            let c = g.mul(a, b);
            let d = g.softplus(c);
            let e = g.soft_clamp(d, 0.7);
            let s = g.square(p);
            let s = g.add_scalar(s, 1.0);
            let s = g.sqrt(s);
            let l = g.log(s);
            let x = g.add(e, l);
            let x = g.exp(x);
            let r = g.slice_rows(p, 1, 1);
            let x = g.mul_row(x, r);
            let col = g.slice_cols(p, 2, 1);
            let col = g.square(col);
            let col = g.add_scalar(col, 0.5);
            let x = g.div_col(x, col);
            let x = g.mul_col(x, col);
            let x = g.add_row(x, r);
            g.sum_all(x)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn structural_adjoints() {
        let err = check((4, 3), 2, |g, p| {
            let t = g.transpose(p);
            let m = g.matmul(p, t);
            let sh = g.shift_rows(m, 2);
            let gat = g.gather_rows(sh, vec![Some(3), None, Some(3), Some(0)]);
            let cc = g.concat_cols(&[gat, m]);
            let cr = g.concat_rows(&[cc, cc]);
            let rs = g.reshape(cr, 4, 16);
            let ls = g.log_softmax_rows(rs);
            let lse = g.logsumexp_rows(m);
            let sr = g.sum_rows(ls);
            let sc = g.sum_cols(sr);
            let a = g.sum_all(lse);
            let s = g.relu(p);
            let s = g.sum_all(s);
            let s2 = g.scale_by(sc, s);
            let x = g.sub(s2, a);
            g.scale(x, 0.3)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn attention_adjoint() {
        let err = check((9, 8), 3, |g, p| {
            let w = g.transpose(p);
            let _ = w;
            let sq = g.square(p);
            let att = g.local_attention(p, sq, p, 2, 3);
            let t = g.tanh(att);
            g.sum_all(t)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn analysis_matrix_adjoint() {
        let mut rng = SeededRng::new(4);
        let x = random(&mut rng, 3, 8);
        let err = check((1, 4), 5, move |g, p| {
            let m = g.analysis_matrix(p, 8);
            let xc = g.constant(x.clone());
            let y = g.matmul(xc, m);
            let y = g.square(y);
            g.sum_all(y)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn hmm_filter_adjoint_matches_differences() {
        let k = 3;
        let t_len = 6;
        let mut rng = SeededRng::new(6);
        let weights = random(&mut rng, t_len, k + 1);
        let err = check((t_len, k + k * k + k), 7, move |g, p| {
            let e = g.slice_cols(p, 0, k);
            let tr = g.slice_cols(p, k, k * k);
            let tr = g.reshape(tr, t_len * k, k);
            let tr = g.log_softmax_rows(tr);
            let tr = g.reshape(tr, t_len, k * k);
            let init = g.slice_rows(p, 0, 1);
            let init = g.slice_cols(init, k + k * k, k);
            let init = g.log_softmax_rows(init);
            let f = g.hmm_filter(e, tr, init);
            let w = g.constant(weights.clone());
            let x = g.mul(f, w);
            g.sum_all(x)
        });
        assert!(err < 1e-6, "{err}");
    }
}
