//! Eager reverse-mode differentiation over dense matrices.
//!
//! Every operation computes its value immediately and appends a node that
//! remembers its parents. Parents always precede children, so a single
//! reverse sweep over the node list is a valid topological order.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAxis {
    Horizontal,
    Vertical,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    ScaleRows(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Abs(usize),
    Square(usize),
    ClampMin(usize, f64),
    Sum(usize),
    SumRows(usize),
    CumsumExclusive(usize),
    Reshape(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    WeightedRowSum(usize, usize),
    Bilinear {
        x: usize,
        y: usize,
        image: Arc<Image>,
        valid: Vec<bool>,
    },
    Box3(usize, usize),
    GridDiff(usize, usize, GridAxis),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.adjoints[v.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.adjoints[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A differentiable input (network weight).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        assert_eq!(av.cols(), bv.rows(), "matmul {:?} x {:?}", av.shape(), bv.shape());
        let out = av.matmul(bv);
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::MatMul(a.0, b.0), rg)
    }

    /// Adds a `1 x k` row to every row of an `n x k` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(bias));
        assert_eq!(bv.rows(), 1);
        assert_eq!(av.cols(), bv.cols());
        let mut out = av.clone();
        let k = av.cols();
        for row in out.data_mut().chunks_mut(k.max(1)) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a.0, bias.0]);
        self.push(out, Op::AddBias(a.0, bias.0), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(self.val(b), |x, y| x + y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(self.val(b), |x, y| x - y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::Mul(a.0, b.0), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(self.val(b), |x, y| x / y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::Div(a.0, b.0), rg)
    }

    /// `out[r][k] = a[r][0] * b[r][k]` for `a: n x 1`, `b: n x k`.
    pub fn scale_rows(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        assert_eq!(av.cols(), 1);
        assert_eq!(av.rows(), bv.rows());
        let k = bv.cols();
        let mut out = bv.clone();
        for (r, row) in out.data_mut().chunks_mut(k.max(1)).enumerate() {
            let s = av.data()[r];
            for x in row {
                *x *= s;
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, Op::ScaleRows(a.0, b.0), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x * c);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Scale(a.0, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x + c);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::AddScalar(a.0), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Relu(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Sigmoid(a.0), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.val(a).map(softplus);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Softplus(a.0), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::exp);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Exp(a.0), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::abs);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Abs(a.0), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| x * x);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Square(a.0), rg)
    }

    /// `max(a, lo)`; the gradient is zero where the bound is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let out = self.val(a).map(|x| x.max(lo));
        let rg = self.rg(&[a.0]);
        self.push(out, Op::ClampMin(a.0, lo), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.val(a).sum());
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.val(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `n x k -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.val(a);
        let k = av.cols();
        let data = if k == 0 {
            vec![0.0; av.rows()]
        } else {
            av.data().chunks(k).map(|r| r.iter().sum()).collect()
        };
        let out = Tensor::from_vec(av.rows(), 1, data);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::SumRows(a.0), rg)
    }

    /// Per-row exclusive prefix sum: `out[r][j] = sum_{k<j} a[r][k]`.
    pub fn cumsum_exclusive(&mut self, a: Var) -> Var {
        let av = self.val(a);
        let k = av.cols();
        let mut out = Tensor::zeros(av.rows(), k);
        if k > 0 {
            for (src, dst) in av.data().chunks(k).zip(out.data_mut().chunks_mut(k)) {
                let mut acc = 0.0;
                for (s, d) in src.iter().zip(dst.iter_mut()) {
                    *d = acc;
                    acc += s;
                }
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(out, Op::CumsumExclusive(a.0), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.val(a).clone().reshaped(rows, cols);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Reshape(a.0), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.val(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.val(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            let k = pv.cols();
            for r in 0..rows {
                out.data_mut()[r * cols + off..r * cols + off + k].copy_from_slice(pv.row(r));
            }
            off += k;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        self.push(out, Op::ConcatCols(ids), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.val(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.val(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(ids), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.val(a);
        assert!(start <= end && end <= av.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(av.rows() * w);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let out = Tensor::from_vec(av.rows(), w, data);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::SliceCols(a.0, start), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.val(a);
        let mut data = Vec::with_capacity(idx.len() * av.cols());
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor::from_vec(idx.len(), av.cols(), data);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::GatherRows(a.0, idx.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// `out[r][c] = sum_s w[r][s] * v[r*S + s][c]` for `w: R x S`, `v: (R*S) x C`.
    pub fn weighted_row_sum(&mut self, w: Var, v: Var) -> Var {
        let (wv, vv) = (self.val(w), self.val(v));
        let (r_n, s_n) = wv.shape();
        let c_n = vv.cols();
        assert_eq!(vv.rows(), r_n * s_n, "weighted_row_sum shape mismatch");
        let mut out = Tensor::zeros(r_n, c_n);
        for r in 0..r_n {
            for s in 0..s_n {
                let ws = wv.data()[r * s_n + s];
                let vrow = vv.row(r * s_n + s);
                let orow = &mut out.data_mut()[r * c_n..(r + 1) * c_n];
                for (o, x) in orow.iter_mut().zip(vrow) {
                    *o += ws * x;
                }
            }
        }
        let rg = self.rg(&[w.0, v.0]);
        self.push(out, Op::WeightedRowSum(w.0, v.0), rg)
    }

    /// Bilinear lookup of `image` at continuous pixel coordinates `(x, y)`
    /// (both `n x 1`). Coordinates outside `[0, w-1] x [0, h-1]` or non-finite
    /// yield zeros and are reported as invalid; they receive no gradient.
    pub fn bilinear_sample(&mut self, image: &Arc<Image>, x: Var, y: Var) -> (Var, Vec<bool>) {
        let (xv, yv) = (self.val(x), self.val(y));
        assert_eq!(xv.cols(), 1);
        assert_eq!(xv.shape(), yv.shape());
        let n = xv.rows();
        let c = image.channels();
        let mut out = Tensor::zeros(n, c);
        let mut valid = vec![false; n];
        for i in 0..n {
            let (px, py) = (xv.data()[i], yv.data()[i]);
            if image.in_bounds(px, py) {
                valid[i] = true;
                let s = image.sample_unchecked(px, py);
                out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&s[..c]);
            }
        }
        let rg = self.rg(&[x.0, y.0]);
        let var = self.push(
            out,
            Op::Bilinear {
                x: x.0,
                y: y.0,
                image: Arc::clone(image),
                valid: valid.clone(),
            },
            rg,
        );
        (var, valid)
    }

    /// 3x3 box mean over a `side x side` grid stored row-major as `(side*side) x C`.
    /// Only fully covered windows are kept: the result is `((side-2)^2) x C`.
    pub fn box3(&mut self, a: Var, side: usize) -> Var {
        let av = self.val(a);
        assert!(side >= 3);
        assert_eq!(av.rows(), side * side);
        let c = av.cols();
        let o = side - 2;
        let mut out = Tensor::zeros(o * o, c);
        for y in 0..o {
            for x in 0..o {
                let dst = (y * o + x) * c;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let src = av.row((y + dy) * side + x + dx);
                        for ch in 0..c {
                            out.data_mut()[dst + ch] += src[ch];
                        }
                    }
                }
                for ch in 0..c {
                    out.data_mut()[dst + ch] /= 9.0;
                }
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Box3(a.0, side), rg)
    }

    /// Forward differences over a `side x side` grid stored as `(side*side) x C`.
    /// Horizontal gives `(side*(side-1)) x C`, vertical `((side-1)*side) x C`.
    pub fn grid_diff(&mut self, a: Var, side: usize, axis: GridAxis) -> Var {
        let av = self.val(a);
        assert!(side >= 2);
        assert_eq!(av.rows(), side * side);
        let c = av.cols();
        let (w, h) = match axis {
            GridAxis::Horizontal => (side - 1, side),
            GridAxis::Vertical => (side, side - 1),
        };
        let mut out = Tensor::zeros(w * h, c);
        for y in 0..h {
            for x in 0..w {
                let (p0, p1) = grid_pair(side, x, y, axis);
                for ch in 0..c {
                    out.data_mut()[(y * w + x) * c + ch] = av.get(p1, ch) - av.get(p0, ch);
                }
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(out, Op::GridDiff(a.0, side, axis), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            adjoints: adj,
            shapes,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let v = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let t = slot(adj, *a, v(*a).shape());
                    gemm(g, false, v(*b), true, t, 1.0);
                }
                if self.wants(*b) {
                    let t = slot(adj, *b, v(*b).shape());
                    gemm(v(*a), true, g, false, t, 1.0);
                }
            }
            Op::AddBias(a, b) => {
                if self.wants(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    let k = g.cols();
                    let t = slot(adj, *b, (1, k));
                    for row in g.data().chunks(k.max(1)) {
                        for (d, x) in t.data_mut().iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    slot(adj, *b, g.shape()).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    axpy(slot(adj, *b, g.shape()), g.data(), -1.0);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let t = slot(adj, *a, g.shape());
                    for ((d, gx), bx) in t.data_mut().iter_mut().zip(g.data()).zip(v(*b).data()) {
                        *d += gx * bx;
                    }
                }
                if self.wants(*b) {
                    let t = slot(adj, *b, g.shape());
                    for ((d, gx), ax) in t.data_mut().iter_mut().zip(g.data()).zip(v(*a).data()) {
                        *d += gx * ax;
                    }
                }
            }
            Op::Div(a, b) => {
                if self.wants(*a) {
                    let t = slot(adj, *a, g.shape());
                    for ((d, gx), bx) in t.data_mut().iter_mut().zip(g.data()).zip(v(*b).data()) {
                        *d += gx / bx;
                    }
                }
                if self.wants(*b) {
                    let t = slot(adj, *b, g.shape());
                    let it = t.data_mut().iter_mut().zip(g.data()).zip(y.data()).zip(v(*b).data());
                    for (((d, gx), yx), bx) in it {
                        *d -= gx * yx / bx;
                    }
                }
            }
            Op::ScaleRows(a, b) => {
                let k = g.cols();
                if self.wants(*a) {
                    let bv = v(*b);
                    let t = slot(adj, *a, v(*a).shape());
                    for r in 0..g.rows() {
                        let s: f64 = g.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum();
                        t.data_mut()[r] += s;
                    }
                }
                if self.wants(*b) {
                    let av = v(*a);
                    let t = slot(adj, *b, g.shape());
                    for r in 0..g.rows() {
                        let s = av.data()[r];
                        for c in 0..k {
                            t.data_mut()[r * k + c] += s * g.data()[r * k + c];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    axpy(slot(adj, *a, g.shape()), g.data(), *c);
                }
            }
            Op::AddScalar(a) => {
                if self.wants(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
            }
            Op::Relu(a) => unary(adj, *a, g, v(*a), |gx, x| if x > 0.0 { gx } else { 0.0 }),
            Op::Sigmoid(a) => unary(adj, *a, g, y, |gx, s| gx * s * (1.0 - s)),
            Op::Softplus(a) => unary(adj, *a, g, v(*a), |gx, x| gx * sigmoid(x)),
            Op::Exp(a) => unary(adj, *a, g, y, |gx, e| gx * e),
            Op::Abs(a) => unary(adj, *a, g, v(*a), |gx, x| {
                if x > 0.0 {
                    gx
                } else if x < 0.0 {
                    -gx
                } else {
                    0.0
                }
            }),
            Op::Square(a) => unary(adj, *a, g, v(*a), |gx, x| 2.0 * gx * x),
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                unary(adj, *a, g, v(*a), |gx, x| if x > lo { gx } else { 0.0 })
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let gs = g.item();
                    for d in slot(adj, *a, v(*a).shape()).data_mut() {
                        *d += gs;
                    }
                }
            }
            Op::SumRows(a) => {
                if self.wants(*a) {
                    let av = v(*a);
                    let k = av.cols();
                    let t = slot(adj, *a, av.shape());
                    for r in 0..av.rows() {
                        let gr = g.data()[r];
                        for d in &mut t.data_mut()[r * k..(r + 1) * k] {
                            *d += gr;
                        }
                    }
                }
            }
            Op::CumsumExclusive(a) => {
                if self.wants(*a) {
                    let k = g.cols();
                    let t = slot(adj, *a, g.shape());
                    if k > 0 {
                        for (grow, trow) in g.data().chunks(k).zip(t.data_mut().chunks_mut(k)) {
                            // d out[j] / d a[m] = 1 for j > m
                            let mut acc = 0.0;
                            for m in (0..k).rev() {
                                trow[m] += acc;
                                acc += grow[m];
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    let t = slot(adj, *a, v(*a).shape());
                    axpy(t, g.data(), 1.0);
                }
            }
            Op::ConcatCols(ids) => {
                let cols = g.cols();
                let mut off = 0;
                for &p in ids {
                    let k = v(p).cols();
                    if self.wants(p) {
                        let t = slot(adj, p, v(p).shape());
                        for r in 0..g.rows() {
                            let src = &g.data()[r * cols + off..r * cols + off + k];
                            for (d, s) in t.data_mut()[r * k..(r + 1) * k].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    off += k;
                }
            }
            Op::ConcatRows(ids) => {
                let mut off = 0;
                for &p in ids {
                    let n = v(p).len();
                    if self.wants(p) {
                        let t = slot(adj, p, v(p).shape());
                        axpy(t, &g.data()[off..off + n], 1.0);
                    }
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                if self.wants(*a) {
                    let full = v(*a).cols();
                    let w = g.cols();
                    let t = slot(adj, *a, v(*a).shape());
                    for r in 0..g.rows() {
                        for c in 0..w {
                            t.data_mut()[r * full + start + c] += g.data()[r * w + c];
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if self.wants(*a) {
                    let k = g.cols();
                    let t = slot(adj, *a, v(*a).shape());
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..k {
                            t.data_mut()[src * k + c] += g.data()[r * k + c];
                        }
                    }
                }
            }
            Op::WeightedRowSum(w, vals) => {
                let (wv, vv) = (v(*w), v(*vals));
                let (r_n, s_n) = wv.shape();
                let c_n = vv.cols();
                if self.wants(*w) {
                    let t = slot(adj, *w, wv.shape());
                    for r in 0..r_n {
                        let grow = g.row(r);
                        for s in 0..s_n {
                            let d: f64 = grow.iter().zip(vv.row(r * s_n + s)).map(|(a, b)| a * b).sum();
                            t.data_mut()[r * s_n + s] += d;
                        }
                    }
                }
                if self.wants(*vals) {
                    let t = slot(adj, *vals, vv.shape());
                    for r in 0..r_n {
                        for s in 0..s_n {
                            let ws = wv.data()[r * s_n + s];
                            let base = (r * s_n + s) * c_n;
                            for c in 0..c_n {
                                t.data_mut()[base + c] += ws * g.data()[r * c_n + c];
                            }
                        }
                    }
                }
            }
            Op::Bilinear { x, y: yi, image, valid } => {
                let (xv, yv) = (v(*x), v(*yi));
                let c = image.channels();
                let mut gx = vec![0.0; valid.len()];
                let mut gy = vec![0.0; valid.len()];
                for (n, ok) in valid.iter().enumerate() {
                    if !ok {
                        continue;
                    }
                    let (dx, dy) = image.sample_gradient(xv.data()[n], yv.data()[n]);
                    let grow = &g.data()[n * c..(n + 1) * c];
                    gx[n] = grow.iter().zip(&dx[..c]).map(|(a, b)| a * b).sum();
                    gy[n] = grow.iter().zip(&dy[..c]).map(|(a, b)| a * b).sum();
                }
                if self.wants(*x) {
                    axpy(slot(adj, *x, xv.shape()), &gx, 1.0);
                }
                if self.wants(*yi) {
                    axpy(slot(adj, *yi, yv.shape()), &gy, 1.0);
                }
            }
            Op::Box3(a, side) => {
                if self.wants(*a) {
                    let side = *side;
                    let o = side - 2;
                    let c = g.cols();
                    let t = slot(adj, *a, v(*a).shape());
                    for yy in 0..o {
                        for xx in 0..o {
                            let grow = &g.data()[(yy * o + xx) * c..(yy * o + xx + 1) * c];
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let base = ((yy + dy) * side + xx + dx) * c;
                                    for ch in 0..c {
                                        t.data_mut()[base + ch] += grow[ch] / 9.0;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::GridDiff(a, side, axis) => {
                if self.wants(*a) {
                    let side = *side;
                    let c = g.cols();
                    let (w, h) = match axis {
                        GridAxis::Horizontal => (side - 1, side),
                        GridAxis::Vertical => (side, side - 1),
                    };
                    let t = slot(adj, *a, v(*a).shape());
                    for yy in 0..h {
                        for xx in 0..w {
                            let (p0, p1) = grid_pair(side, xx, yy, *axis);
                            for ch in 0..c {
                                let gv = g.data()[(yy * w + xx) * c + ch];
                                t.data_mut()[p1 * c + ch] += gv;
                                t.data_mut()[p0 * c + ch] -= gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn grid_pair(side: usize, x: usize, y: usize, axis: GridAxis) -> (usize, usize) {
    match axis {
        GridAxis::Horizontal => (y * side + x, y * side + x + 1),
        GridAxis::Vertical => (y * side + x, (y + 1) * side + x),
    }
}

fn slot(adj: &mut [Option<Tensor>], i: usize, shape: (usize, usize)) -> &mut Tensor {
    adj[i].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn axpy(t: &mut Tensor, g: &[f64], c: f64) {
    for (d, x) in t.data_mut().iter_mut().zip(g) {
        *d += c * x;
    }
}

fn unary(adj: &mut [Option<Tensor>], a: usize, g: &Tensor, saved: &Tensor, f: impl Fn(f64, f64) -> f64) {
    let t = slot(adj, a, g.shape());
    for ((d, gx), s) in t.data_mut().iter_mut().zip(g.data()).zip(saved.data()) {
        *d += f(*gx, *s);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}
