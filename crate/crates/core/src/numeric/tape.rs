//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! The tape is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list visits every node
//! after all of its consumers.

use std::sync::Arc;

use super::scalar::Scalar;
use super::tensor::{gemm_into, Tensor};
use super::{NumericError, Result, ShapeError};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    Exp(Var),
    Ln(Var),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Elu(Var, S),
    LeakyRelu(Var, S),
    Prelu(Var, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    LayerNorm(Var, Vec<S>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    Mse(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentRows { x: Var, offsets: Arc<[usize]>, mean: bool },
    SpmmSum { x: Var, offsets: Arc<[usize]>, indices: Arc<[usize]> },
    EdgeAggregate { alpha: Var, h: Var, src: Arc<[usize]>, dst: Arc<[usize]> },
    HeadMean(Var, usize),
    HeadSum(Var, usize),
    ScaleVar(Var, Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    tracked: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    backward_done: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ShapeError::new(op, a.shape(), b.shape()).into());
    }
    Ok(())
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if !ok {
        return Err(NumericError::Invalid(format!("{op}: segment offsets do not partition {rows} rows")));
    }
    Ok(())
}

fn check_index(op: &'static str, index: &[usize], len: usize) -> Result<()> {
    if let Some(&bad) = index.iter().find(|&&i| i >= len) {
        return Err(NumericError::Index { op, index: bad, len });
    }
    Ok(())
}

#[inline]
/// Logistic function without overflow for large `|x|`.
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    let e = (-x.abs()).exp();
    let r = S::one() / (S::one() + e);
    if x >= S::zero() {
        r
    } else {
        e * r
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Tracked input; its gradient is available after `backward`.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked(v)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads[v.0].take()
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn unary(&mut self, x: Var, value: Tensor<S>, op: Op<S>) -> Var {
        let tracked = self.tracked(x);
        self.push(value, op, tracked)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<S>, op: Op<S>) -> Var {
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, op, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.binary(a, b, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.binary(a, b, value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.binary(a, b, value, Op::Mul(a, b)))
    }

    /// `x + b` with `b` a `1 x c` row added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(ShapeError::new("add_row", xv.shape(), bv.shape()).into());
        }
        let c = xv.cols();
        let mut value = xv.clone();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                for (o, &w) in row.iter_mut().zip(bv.data()) {
                    *o = *o + w;
                }
            }
        }
        Ok(self.binary(x, b, value, Op::AddRow(x, b)))
    }

    /// `x * w` with `w` a `1 x c` row scaling every row.
    pub fn mul_row(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rows() != 1 || wv.cols() != xv.cols() {
            return Err(ShapeError::new("mul_row", xv.shape(), wv.shape()).into());
        }
        let c = xv.cols();
        let mut value = xv.clone();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                for (o, &s) in row.iter_mut().zip(wv.data()) {
                    *o = *o * s;
                }
            }
        }
        Ok(self.binary(x, w, value, Op::MulRow(x, w)))
    }

    /// `x * w` with `w` an `n x 1` column scaling every column.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(ShapeError::new("mul_col", xv.shape(), wv.shape()).into());
        }
        let value = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| xv.get(r, c) * wv.get(r, 0));
        Ok(self.binary(x, w, value, Op::MulCol(x, w)))
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.unary(x, value, Op::Scale(x, s))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        self.unary(x, value, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.unary(x, value, Op::Ln(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.unary(x, value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.unary(x, value, Op::Tanh(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.unary(x, value, Op::Silu(x))
    }

    pub fn elu(&mut self, x: Var, alpha: S) -> Var {
        let value = self.value(x).map(|v| if v > S::zero() { v } else { alpha * v.exp_m1() });
        self.unary(x, value, Op::Elu(x, alpha))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Var {
        let value = self.value(x).map(|v| if v > S::zero() { v } else { slope * v });
        self.unary(x, value, Op::LeakyRelu(x, slope))
    }

    /// PReLU with a single learnable slope `a` (`1 x 1`).
    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != [1, 1] {
            return Err(ShapeError::new("prelu", self.value(x).shape(), av.shape()).into());
        }
        let slope = av.item();
        let value = self.value(x).map(|v| if v > S::zero() { v } else { slope * v });
        Ok(self.binary(x, a, value, Op::Prelu(x, a)))
    }

    /// Softmax within contiguous row segments, independently per column.
    pub fn segment_softmax(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        check_offsets("segment_softmax", &offsets, xv.rows())?;
        let cols = xv.cols();
        let mut value = xv.clone();
        for seg in offsets.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            if lo == hi {
                continue;
            }
            for c in 0..cols {
                let mut m = S::neg_infinity();
                for r in lo..hi {
                    m = m.max(xv.get(r, c));
                }
                let mut z = S::zero();
                for r in lo..hi {
                    let e = (xv.get(r, c) - m).exp();
                    value.set(r, c, e);
                    z = z + e;
                }
                for r in lo..hi {
                    value.set(r, c, value.get(r, c) / z);
                }
            }
        }
        Ok(self.unary(x, value, Op::SegmentSoftmax(x, offsets)))
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let eps = S::from_f64(eps);
        let n = S::from_f64(cols as f64);
        let mut value = xv.clone();
        let mut inv = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = value.row_mut(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv.push(is);
        }
        self.unary(x, value, Op::LayerNorm(x, inv))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| NumericError::Invalid("concat_cols: no operands".into()))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(ShapeError::new("concat_cols", self.shape(first), self.shape(p)).into());
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), tracked))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(ShapeError::new("slice_cols", xv.shape(), [start, end]).into());
        }
        let value = Tensor::from_fn(xv.rows(), end - start, |r, c| xv.get(r, start + c));
        Ok(self.unary(x, value, Op::SliceCols(x, start)))
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = S::from_f64(xv.rows().max(1) as f64);
        let mut value = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, &v) in value.data_mut().iter_mut().zip(xv.row(r)) {
                *o = *o + v;
            }
        }
        value.scale_assign(S::one() / n);
        self.unary(x, value, Op::MeanRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.unary(x, value, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.sum() / S::from_f64(xv.len().max(1) as f64));
        self.unary(x, value, Op::MeanAll(x))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mse", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = S::from_f64(av.len().max(1) as f64);
        let s: S = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        Ok(self.binary(a, b, Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    /// Row `i` of the result is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        check_index("gather_rows", &index, xv.rows())?;
        let value = xv.select_rows(&index);
        Ok(self.unary(x, value, Op::GatherRows(x, index)))
    }

    /// Sum or mean of contiguous row segments; one output row per segment.
    pub fn segment_rows(&mut self, x: Var, offsets: Arc<[usize]>, mean: bool) -> Result<Var> {
        let xv = self.value(x);
        check_offsets("segment_rows", &offsets, xv.rows())?;
        let segs = offsets.len() - 1;
        let mut value = Tensor::zeros(segs, xv.cols());
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let out = value.row_mut(s);
            for r in lo..hi {
                for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                    *o = *o + v;
                }
            }
            if mean && hi > lo {
                let k = S::one() / S::from_f64((hi - lo) as f64);
                out.iter_mut().for_each(|o| *o = *o * k);
            }
        }
        Ok(self.unary(x, value, Op::SegmentRows { x, offsets, mean }))
    }

    /// Neighbor sum over a CSR structure: row `v` is the sum of `x[u]` for
    /// `u` in `indices[offsets[v]..offsets[v+1]]`.
    pub fn spmm_sum(&mut self, x: Var, offsets: Arc<[usize]>, indices: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        check_offsets("spmm_sum", &offsets, indices.len())?;
        check_index("spmm_sum", &indices, xv.rows())?;
        let n = offsets.len() - 1;
        let mut value = Tensor::zeros(n, xv.cols());
        for v in 0..n {
            let out = value.row_mut(v);
            for &u in &indices[offsets[v]..offsets[v + 1]] {
                for (o, &val) in out.iter_mut().zip(xv.row(u)) {
                    *o = *o + val;
                }
            }
        }
        Ok(self.unary(x, value, Op::SpmmSum { x, offsets, indices }))
    }

    /// Multi-head attention aggregation. `alpha` is `E x H`, `h` is `n x (H*F)`;
    /// output row `v` head `k` is the sum over edges `e` with `dst[e] = v` of
    /// `alpha[e,k] * h[src[e], k*F..(k+1)*F]`.
    pub fn edge_aggregate(&mut self, alpha: Var, h: Var, src: Arc<[usize]>, dst: Arc<[usize]>) -> Result<Var> {
        let (av, hv) = (self.value(alpha), self.value(h));
        let heads = av.cols();
        if av.rows() != src.len() || src.len() != dst.len() || heads == 0 || hv.cols() % heads != 0 {
            return Err(ShapeError::new("edge_aggregate", av.shape(), hv.shape()).into());
        }
        check_index("edge_aggregate", &src, hv.rows())?;
        check_index("edge_aggregate", &dst, hv.rows())?;
        let f = hv.cols() / heads;
        let mut value = Tensor::zeros(hv.rows(), hv.cols());
        for e in 0..src.len() {
            let (s, d) = (src[e], dst[e]);
            for k in 0..heads {
                let a = av.get(e, k);
                let hs = &hv.row(s)[k * f..(k + 1) * f];
                let out = &mut value.row_mut(d)[k * f..(k + 1) * f];
                for (o, &x) in out.iter_mut().zip(hs) {
                    *o = *o + a * x;
                }
            }
        }
        Ok(self.binary(alpha, h, value, Op::EdgeAggregate { alpha, h, src, dst }))
    }

    /// Average of `heads` equal-width column blocks.
    pub fn head_mean(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if heads == 0 || xv.cols() % heads != 0 {
            return Err(ShapeError::new("head_mean", xv.shape(), [heads, 1]).into());
        }
        let f = xv.cols() / heads;
        let k = S::one() / S::from_f64(heads as f64);
        let value = Tensor::from_fn(xv.rows(), f, |r, c| (0..heads).map(|h| xv.get(r, h * f + c)).sum::<S>() * k);
        Ok(self.unary(x, value, Op::HeadMean(x, heads)))
    }

    /// Sum within each of `heads` equal-width column blocks; `n x heads`.
    pub fn head_sum(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if heads == 0 || xv.cols() % heads != 0 {
            return Err(ShapeError::new("head_sum", xv.shape(), [heads, 1]).into());
        }
        let f = xv.cols() / heads;
        let value = Tensor::from_fn(xv.rows(), heads, |r, h| xv.row(r)[h * f..(h + 1) * f].iter().copied().sum());
        Ok(self.unary(x, value, Op::HeadSum(x, heads)))
    }

    /// `s * x` with `s` a `1 x 1` variable.
    pub fn scale_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != [1, 1] {
            return Err(ShapeError::new("scale_var", self.value(x).shape(), sv.shape()).into());
        }
        let k = sv.item();
        let value = self.value(x).map(|v| v * k);
        Ok(self.binary(x, s, value, Op::ScaleVar(x, s)))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(NumericError::DoubleBackward);
        }
        let shape = self.shape(root);
        if shape != [1, 1] {
            return Err(NumericError::NonScalarRoot(shape));
        }
        if !self.tracked(root) {
            return Err(NumericError::UntrackedRoot);
        }
        self.backward_done = true;
        self.grads[root.0] = Some(Tensor::scalar(S::one()));
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=root.0).rev() {
            if !nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn slot<'a, S: Scalar>(grads: &'a mut [Option<Tensor<S>>], nodes: &[Node<S>], v: Var) -> Option<&'a mut Tensor<S>> {
    let node = &nodes[v.0];
    if !node.tracked {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.rows(), node.value.cols())))
}

fn acc_map<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    nodes: &[Node<S>],
    x: Var,
    g: &Tensor<S>,
    f: impl Fn(usize, S) -> S,
) {
    if let Some(gx) = slot(grads, nodes, x) {
        for (i, (o, &gi)) in gx.data_mut().iter_mut().zip(g.data()).enumerate() {
            *o = *o + f(i, gi);
        }
    }
}

fn propagate<S: Scalar>(nodes: &[Node<S>], grads: &mut [Option<Tensor<S>>], i: usize, g: &Tensor<S>) {
    let y = &nodes[i].value;
    let val = |v: Var| &nodes[v.0].value;
    let zero = S::zero();
    let one = S::one();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                gemm_into(g, false, val(*b), true, ga, one);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                gemm_into(val(*a), true, g, false, gb, one);
            }
        }
        Op::Add(a, b) => {
            acc_map(grads, nodes, *a, g, |_, gi| gi);
            acc_map(grads, nodes, *b, g, |_, gi| gi);
        }
        Op::Sub(a, b) => {
            acc_map(grads, nodes, *a, g, |_, gi| gi);
            acc_map(grads, nodes, *b, g, |_, gi| -gi);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            acc_map(grads, nodes, *a, g, |k, gi| gi * bv[k]);
            acc_map(grads, nodes, *b, g, |k, gi| gi * av[k]);
        }
        Op::AddRow(x, b) => {
            acc_map(grads, nodes, *x, g, |_, gi| gi);
            if let Some(gb) = slot(grads, nodes, *b) {
                let c = g.cols();
                for r in 0..g.rows() {
                    for (o, &gi) in gb.data_mut().iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                        *o = *o + gi;
                    }
                }
            }
        }
        Op::MulRow(x, w) => {
            let (xv, wv) = (val(*x), val(*w));
            let c = g.cols();
            acc_map(grads, nodes, *x, g, |k, gi| gi * wv.data()[k % c]);
            if let Some(gw) = slot(grads, nodes, *w) {
                for r in 0..g.rows() {
                    for j in 0..c {
                        let o = &mut gw.data_mut()[j];
                        *o = *o + g.get(r, j) * xv.get(r, j);
                    }
                }
            }
        }
        Op::MulCol(x, w) => {
            let (xv, wv) = (val(*x), val(*w));
            let c = g.cols();
            acc_map(grads, nodes, *x, g, |k, gi| gi * wv.data()[k / c]);
            if let Some(gw) = slot(grads, nodes, *w) {
                for r in 0..g.rows() {
                    let s: S = g.row(r).iter().zip(xv.row(r)).map(|(&a, &b)| a * b).sum();
                    let o = &mut gw.data_mut()[r];
                    *o = *o + s;
                }
            }
        }
        Op::Scale(x, s) => acc_map(grads, nodes, *x, g, |_, gi| gi * *s),
        Op::Exp(x) => acc_map(grads, nodes, *x, g, |k, gi| gi * y.data()[k]),
        Op::Ln(x) => {
            let xv = val(*x).data();
            acc_map(grads, nodes, *x, g, |k, gi| gi / xv[k])
        }
        Op::Sigmoid(x) => acc_map(grads, nodes, *x, g, |k, gi| {
            let s = y.data()[k];
            gi * s * (one - s)
        }),
        Op::Tanh(x) => acc_map(grads, nodes, *x, g, |k, gi| {
            let t = y.data()[k];
            gi * (one - t * t)
        }),
        Op::Silu(x) => {
            let xv = val(*x).data();
            acc_map(grads, nodes, *x, g, |k, gi| {
                let s = sigmoid(xv[k]);
                gi * s * (one + xv[k] * (one - s))
            })
        }
        Op::Elu(x, alpha) => {
            let xv = val(*x).data();
            acc_map(grads, nodes, *x, g, |k, gi| if xv[k] > zero { gi } else { gi * (y.data()[k] + *alpha) })
        }
        Op::LeakyRelu(x, slope) => {
            let xv = val(*x).data();
            acc_map(grads, nodes, *x, g, |k, gi| if xv[k] > zero { gi } else { gi * *slope })
        }
        Op::Prelu(x, a) => {
            let xv = val(*x).data();
            let slope = val(*a).item();
            acc_map(grads, nodes, *x, g, |k, gi| if xv[k] > zero { gi } else { gi * slope });
            if let Some(ga) = slot(grads, nodes, *a) {
                let s: S = xv.iter().zip(g.data()).filter(|(&v, _)| v <= zero).map(|(&v, &gi)| v * gi).sum();
                ga.data_mut()[0] = ga.data()[0] + s;
            }
        }
        Op::SegmentSoftmax(x, offsets) => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for seg in offsets.windows(2) {
                    for c in 0..g.cols() {
                        let dot: S = (seg[0]..seg[1]).map(|r| y.get(r, c) * g.get(r, c)).sum();
                        for r in seg[0]..seg[1] {
                            let d = y.get(r, c) * (g.get(r, c) - dot);
                            gx.set(r, c, gx.get(r, c) + d);
                        }
                    }
                }
            }
        }
        Op::LayerNorm(x, inv) => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let n = S::from_f64(g.cols() as f64);
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mg = gr.iter().copied().sum::<S>() / n;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = *o + inv[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for p in parts {
                let w = val(*p).cols();
                if let Some(gp) = slot(grads, nodes, *p) {
                    for r in 0..g.rows() {
                        for (o, &gi) in gp.row_mut(r).iter_mut().zip(&g.row(r)[start..start + w]) {
                            *o = *o + gi;
                        }
                    }
                }
                start += w;
            }
        }
        Op::SliceCols(x, start) => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let w = g.cols();
                for r in 0..g.rows() {
                    for (o, &gi) in gx.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                        *o = *o + gi;
                    }
                }
            }
        }
        Op::MeanRows(x) => {
            let n = S::from_f64(val(*x).rows().max(1) as f64);
            acc_map(grads, nodes, *x, &tile_rows(g, val(*x).rows()), |_, gi| gi / n);
        }
        Op::SumAll(x) => {
            let gi = g.item();
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.data_mut().iter_mut().for_each(|o| *o = *o + gi);
            }
        }
        Op::MeanAll(x) => {
            let gi = g.item() / S::from_f64(val(*x).len().max(1) as f64);
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.data_mut().iter_mut().for_each(|o| *o = *o + gi);
            }
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let k = g.item() * S::from_f64(2.0 / av.len().max(1) as f64);
            if let Some(ga) = slot(grads, nodes, *a) {
                for (j, o) in ga.data_mut().iter_mut().enumerate() {
                    *o = *o + k * (av[j] - bv[j]);
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (j, o) in gb.data_mut().iter_mut().enumerate() {
                    *o = *o - k * (av[j] - bv[j]);
                }
            }
        }
        Op::GatherRows(x, index) => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for (r, &src) in index.iter().enumerate() {
                    for (o, &gi) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o = *o + gi;
                    }
                }
            }
        }
        Op::SegmentRows { x, offsets, mean } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    let k = if *mean && hi > lo { one / S::from_f64((hi - lo) as f64) } else { one };
                    for r in lo..hi {
                        for (o, &gi) in gx.row_mut(r).iter_mut().zip(g.row(s)) {
                            *o = *o + gi * k;
                        }
                    }
                }
            }
        }
        Op::SpmmSum { x, offsets, indices } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for v in 0..offsets.len() - 1 {
                    for &u in &indices[offsets[v]..offsets[v + 1]] {
                        for (o, &gi) in gx.row_mut(u).iter_mut().zip(g.row(v)) {
                            *o = *o + gi;
                        }
                    }
                }
            }
        }
        Op::EdgeAggregate { alpha, h, src, dst } => {
            let (av, hv) = (val(*alpha), val(*h));
            let heads = av.cols();
            let f = hv.cols() / heads;
            if let Some(ga) = slot(grads, nodes, *alpha) {
                for e in 0..src.len() {
                    for k in 0..heads {
                        let gd = &g.row(dst[e])[k * f..(k + 1) * f];
                        let hs = &hv.row(src[e])[k * f..(k + 1) * f];
                        let s: S = gd.iter().zip(hs).map(|(&a, &b)| a * b).sum();
                        ga.set(e, k, ga.get(e, k) + s);
                    }
                }
            }
            if let Some(gh) = slot(grads, nodes, *h) {
                for e in 0..src.len() {
                    for k in 0..heads {
                        let a = av.get(e, k);
                        let gd = &g.row(dst[e])[k * f..(k + 1) * f];
                        let out = &mut gh.row_mut(src[e])[k * f..(k + 1) * f];
                        for (o, &gi) in out.iter_mut().zip(gd) {
                            *o = *o + a * gi;
                        }
                    }
                }
            }
        }
        Op::HeadMean(x, heads) => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let f = g.cols();
                let k = one / S::from_f64(*heads as f64);
                for r in 0..g.rows() {
                    let gr = g.row(r).to_vec();
                    let out = gx.row_mut(r);
                    for h in 0..*heads {
                        for c in 0..f {
                            out[h * f + c] = out[h * f + c] + gr[c] * k;
                        }
                    }
                }
            }
        }
        Op::HeadSum(x, heads) => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let f = gx.cols() / heads;
                for r in 0..g.rows() {
                    let gr = g.row(r).to_vec();
                    for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = *o + gr[j / f];
                    }
                }
            }
        }
        Op::ScaleVar(x, s) => {
            let k = val(*s).item();
            acc_map(grads, nodes, *x, g, |_, gi| gi * k);
            if let Some(gs) = slot(grads, nodes, *s) {
                let d: S = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a * b).sum();
                gs.data_mut()[0] = gs.data()[0] + d;
            }
        }
    }
}

fn tile_rows<S: Scalar>(row: &Tensor<S>, n: usize) -> Tensor<S> {
    Tensor::from_fn(n, row.cols(), |_, c| row.get(0, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_of_linear_map_gradient_is_ones_outer_x() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]));
        let x = tape.constant(t(3, 1, &[0.3, -1.2, 2.0]));
        let y = tape.matmul(w, x).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[0.3, -1.2, 2.0, 0.3, -1.2, 2.0]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_call() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        assert_eq!(tape.backward(x), Err(NumericError::NonScalarRoot([1, 2])));
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(NumericError::DoubleBackward));
        tape.reset_grads();
        tape.backward(s).unwrap();
    }

    #[test]
    fn singleton_segment_softmax_is_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(3, 2, &[5.0, -3.0, 1.0, 2.0, 0.0, 0.0]));
        let y = tape.segment_softmax(x, Arc::from(vec![0, 1, 3])).unwrap();
        let v = tape.value(y);
        assert_eq!(v.row(0), &[1.0, 1.0]);
        assert!((v.get(1, 0) + v.get(2, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(2, 3, &[4.0, 4.0, 4.0, 1.0, 2.0, 3.0]));
        let y = tape.layer_norm(x, 1e-5);
        assert_eq!(tape.value(y).row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_is_structured() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        let err = tape.add(a, b).unwrap_err();
        assert_eq!(err, NumericError::Shape(ShapeError::new("add", [2, 3], [3, 2])));
    }

    #[test]
    fn gather_out_of_range_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.gather_rows(a, Arc::from(vec![0, 2])).unwrap_err();
        assert!(matches!(err, NumericError::Index { index: 2, len: 2, .. }));
    }
}
