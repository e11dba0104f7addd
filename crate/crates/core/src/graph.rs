//! A small reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep visits
//! every node after all of its consumers. Shape errors inside the tape are
//! programming errors and panic; public model entry points validate inputs
//! before building a graph.

use std::sync::Arc;

use crate::directional::{local_attention_backward, local_attention_forward, CandidateIndex};
use crate::kernels::{
    attention_backward, attention_forward, conv1d_backward, conv1d_forward, conv2d_backward,
    conv2d_forward, fold_patches, rope_apply, unfold_patches, ConvGeom, PatchGeom,
};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Silu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    LocalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        index: Arc<CandidateIndex>,
        probs: Vec<T>,
    },
    Rope {
        x: Var,
        heads: usize,
        positions: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Unfold {
        x: Var,
        geom: PatchGeom,
    },
    Fold {
        x: Var,
        geom: PatchGeom,
    },
    Mse(Var, Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let val = half * x * (T::one() + th);
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    let der = half * (T::one() + th) + half * x * (T::one() - th * th) * du;
    (val, der)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.tracked(v))
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copy of `x`'s current value as an untracked constant.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x + y);
        let tr = self.any_tracked(&[a, b]);
        self.push(t, Op::Add(a, b), tr)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x - y);
        let tr = self.any_tracked(&[a, b]);
        self.push(t, Op::Sub(a, b), tr)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x * y);
        let tr = self.any_tracked(&[a, b]);
        self.push(t, Op::Mul(a, b), tr)
    }

    fn row_broadcast(&mut self, x: Var, r: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (tx, tr) = (self.value(x), self.value(r));
        let c = tx.cols();
        assert_eq!(tr.numel(), c, "row operand must match the last axis");
        let mut out = tx.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, &rv) in row.iter_mut().zip(tr.data()) {
                *o = f(*o, rv);
            }
        }
        out
    }

    /// `x[.., j] + r[j]`
    pub fn add_row(&mut self, x: Var, r: Var) -> Var {
        let t = self.row_broadcast(x, r, |a, b| a + b);
        let tr = self.any_tracked(&[x, r]);
        self.push(t, Op::AddRow(x, r), tr)
    }

    /// `x[.., j] * r[j]`
    pub fn mul_row(&mut self, x: Var, r: Var) -> Var {
        let t = self.row_broadcast(x, r, |a, b| a * b);
        let tr = self.any_tracked(&[x, r]);
        self.push(t, Op::MulRow(x, r), tr)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let tr = self.tracked(x);
        self.push(t, Op::Scale(x, c), tr)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v + c);
        let tr = self.tracked(x);
        self.push(t, Op::AddScalar(x), tr)
    }

    /// `[.., k] x [k, n] -> [rows, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        assert_eq!(tb.shape().len(), 2, "matmul rhs must be 2-D");
        assert_eq!(tb.shape()[0], k, "matmul inner dimension");
        let n = tb.shape()[1];
        let mut c = vec![T::zero(); m * n];
        gemm_nn(ta.data(), tb.data(), &mut c, m, k, n);
        let t = Tensor::new(vec![m, n], c).expect("matmul shape");
        let tr = self.any_tracked(&[a, b]);
        self.push(t, Op::MatMul(a, b), tr)
    }

    /// `x · w + b` with `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x).transpose2();
        let tr = self.tracked(x);
        self.push(t, Op::Transpose(x), tr)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape).expect("reshape numel");
        let tr = self.tracked(x);
        self.push(t, Op::Reshape(x), tr)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * sigmoid(v));
        let tr = self.tracked(x);
        self.push(t, Op::Silu(x), tr)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| gelu_parts(v).0);
        let tr = self.tracked(x);
        self.push(t, Op::Gelu(x), tr)
    }

    /// Normalises every row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.cols();
        let eps = T::lit(LN_EPS);
        let inv_c = T::one() / T::of_usize(c);
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut rstd = Vec::with_capacity(tx.rows());
        for row in tx.data().chunks_exact(c) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_c;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_c;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let t = Tensor::new(tx.shape().to_vec(), xhat.clone()).expect("layer norm shape");
        let tr = self.tracked(x);
        self.push(t, Op::LayerNorm { x, xhat, rstd }, tr)
    }

    /// Columns `start..start + len` of a 2-D view.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        assert!(start + len <= c, "column slice out of range");
        let mut out = Vec::with_capacity(r * len);
        for row in tx.data().chunks_exact(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::new(vec![r, len], out).expect("slice shape");
        let tr = self.tracked(x);
        self.push(t, Op::SliceCols { x, start }, tr)
    }

    /// Rows of a 2-D view selected (with repetition) by `idx`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < r, "gather index {i} out of {r} rows");
            out.extend_from_slice(&tx.data()[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![idx.len(), c], out).expect("gather shape");
        let tr = self.tracked(x);
        self.push(t, Op::GatherRows { x, idx }, tr)
    }

    /// Full multi-head attention; `q: [n, d]`, `k, v: [s, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_limit: Option<&[usize]>) -> Var {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (tq.rows(), tq.cols());
        let s = tk.rows();
        assert_eq!(tk.cols(), d, "key width");
        assert_eq!(tv.rows(), s, "value rows");
        assert_eq!(tv.cols(), d, "value width");
        if let Some(l) = key_limit {
            assert_eq!(l.len(), n, "one key limit per query");
        }
        let (out, probs) = attention_forward(tq.data(), tk.data(), tv.data(), n, s, d, heads, key_limit);
        let t = Tensor::new(vec![n, d], out).expect("attention shape");
        let tr = self.any_tracked(&[q, k, v]);
        self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            tr,
        )
    }

    /// Attention restricted to each row's candidates in `index`.
    pub fn local_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, index: Arc<CandidateIndex>) -> Var {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        assert_eq!(tq.rows(), index.n(), "one query per patch");
        let (out, probs) = local_attention_forward(tq.data(), tk.data(), tv.data(), d, heads, &index);
        let t = Tensor::new(vec![index.n(), d], out).expect("local attention shape");
        let tr = self.any_tracked(&[q, k, v]);
        self.push(
            t,
            Op::LocalAttention {
                q,
                k,
                v,
                heads,
                index,
                probs,
            },
            tr,
        )
    }

    /// Rotary position embedding of every head slice; row `r` sits at
    /// `positions[r]`.
    pub fn rope(&mut self, x: Var, heads: usize, positions: Vec<usize>) -> Var {
        let tx = self.value(x);
        assert_eq!(tx.rows(), positions.len(), "one position per row");
        let out = rope_apply(tx.data(), tx.cols(), heads, &positions, T::one());
        let t = Tensor::new(tx.shape().to_vec(), out).expect("rope shape");
        let tr = self.tracked(x);
        self.push(t, Op::Rope { x, heads, positions }, tr)
    }

    /// Masked 3×3 convolution of `x: [cin, bins, frames]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let [cin, bins, frames] = *tx.shape() else {
            panic!("conv2d input must be [c, bins, frames], got {:?}", tx.shape());
        };
        let cout = tw.shape()[0];
        let geom = ConvGeom {
            cin,
            cout,
            bins,
            frames,
        };
        let out = conv2d_forward(tx.data(), tw.data(), self.value(b).data(), geom);
        let t = Tensor::new(vec![cout, bins, frames], out).expect("conv2d shape");
        let tr = self.any_tracked(&[x, w, b]);
        self.push(t, Op::Conv2d { x, w, b, geom }, tr)
    }

    /// Kernel-3 convolution over the rows of `x: [len, cin]`, `w: [3, cin, cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (len, cin) = (tx.rows(), tx.cols());
        let cout = tw.cols();
        assert_eq!(tw.numel(), 3 * cin * cout, "conv1d weight shape");
        let out = conv1d_forward(tx.data(), tw.data(), self.value(b).data(), len, cin, cout);
        let t = Tensor::new(vec![len, cout], out).expect("conv1d shape");
        let tr = self.any_tracked(&[x, w, b]);
        self.push(t, Op::Conv1d { x, w, b }, tr)
    }

    /// `[c, bins, frames] -> [h·w, c·p·p]`
    pub fn unfold(&mut self, x: Var, patch: usize) -> Var {
        let tx = self.value(x);
        let [channels, bins, frames] = *tx.shape() else {
            panic!("unfold input must be [c, bins, frames], got {:?}", tx.shape());
        };
        let geom = PatchGeom {
            channels,
            bins,
            frames,
            patch,
        };
        let out = unfold_patches(tx.data(), geom);
        let t = Tensor::new(vec![geom.h() * geom.w(), geom.patch_len()], out).expect("unfold shape");
        let tr = self.tracked(x);
        self.push(t, Op::Unfold { x, geom }, tr)
    }

    /// `[h·w, c·p·p] -> [c, bins, frames]`
    pub fn fold(&mut self, x: Var, geom: PatchGeom) -> Var {
        let out = fold_patches(self.value(x).data(), geom);
        let t = Tensor::new(vec![geom.channels, geom.bins, geom.frames], out).expect("fold shape");
        let tr = self.tracked(x);
        self.push(t, Op::Fold { x, geom }, tr)
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.numel(), tb.numel(), "mse operand sizes");
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
        let t = Tensor::scalar(s / T::of_usize(ta.numel()));
        let tr = self.any_tracked(&[a, b]);
        self.push(t, Op::Mse(a, b), tr)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |s, &v| s + v);
        let tr = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tr)
    }

    pub fn scalar_value(&self, x: Var) -> T {
        let t = self.value(x);
        assert_eq!(t.numel(), 1, "not a scalar");
        t.data()[0]
    }

    /// Reverse sweep from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.tracked(v) {
            return;
        }
        let shape = self.value(v).shape();
        assert_eq!(data.len(), self.value(v).numel(), "gradient size");
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(data).for_each(|(a, b)| *a += b),
            slot => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape")),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(tb.data()).map(|(&g, &y)| g * y).collect());
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(ta.data()).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::AddRow(x, r) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.tracked(*r) {
                    let c = g.cols();
                    let mut dr = vec![T::zero(); c];
                    for row in gd.chunks_exact(c) {
                        dr.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    self.accumulate(grads, *r, dr);
                }
            }
            Op::MulRow(x, r) => {
                let (tx, tr) = (self.value(*x), self.value(*r));
                let c = g.cols();
                if self.tracked(*x) {
                    let mut dx = gd.to_vec();
                    for row in dx.chunks_exact_mut(c) {
                        row.iter_mut().zip(tr.data()).for_each(|(a, &b)| *a *= b);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.tracked(*r) {
                    let mut dr = vec![T::zero(); c];
                    for (grow, xrow) in gd.chunks_exact(c).zip(tx.data().chunks_exact(c)) {
                        for j in 0..c {
                            dr[j] += grow[j] * xrow[j];
                        }
                    }
                    self.accumulate(grads, *r, dr);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, gd.iter().map(|&v| v * *c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.shape()[1];
                if self.tracked(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(gd, tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.tracked(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(ta.data(), gd, &mut db, k, m, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose2().into_data()),
            Op::Silu(x) => {
                let tx = self.value(*x);
                let dx = gd
                    .iter()
                    .zip(tx.data())
                    .map(|(&g, &v)| {
                        let s = sigmoid(v);
                        g * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let dx = gd.iter().zip(tx.data()).map(|(&g, &v)| g * gelu_parts(v).1).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm { x, xhat, rstd } => {
                let c = out.cols();
                let inv_c = T::one() / T::of_usize(c);
                let mut dx = Vec::with_capacity(gd.len());
                for ((grow, xrow), &r) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)).zip(rstd) {
                    let mean_g = grow.iter().fold(T::zero(), |s, &v| s + v) * inv_c;
                    let mean_gx = grow.iter().zip(xrow).fold(T::zero(), |s, (&a, &b)| s + a * b) * inv_c;
                    dx.extend(grow.iter().zip(xrow).map(|(&gv, &xv)| r * (gv - mean_g - xv * mean_gx)));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (c, len) = (tx.cols(), g.cols());
                let mut dx = vec![T::zero(); tx.numel()];
                for (drow, grow) in dx.chunks_exact_mut(c).zip(gd.chunks_exact(len)) {
                    drow[*start..start + len].copy_from_slice(grow);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherRows { x, idx } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut dx = vec![T::zero(); tx.numel()];
                for (r, &i) in idx.iter().enumerate() {
                    dx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&gd[r * c..(r + 1) * c])
                        .for_each(|(a, &b)| *a += b);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (dq, dk, dv) = attention_backward(
                    tq.data(),
                    tk.data(),
                    tv.data(),
                    probs,
                    gd,
                    tq.rows(),
                    tk.rows(),
                    tq.cols(),
                    *heads,
                );
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::LocalAttention {
                q,
                k,
                v,
                heads,
                index,
                probs,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (dq, dk, dv) = local_attention_backward(
                    tq.data(),
                    tk.data(),
                    tv.data(),
                    probs,
                    gd,
                    tq.cols(),
                    *heads,
                    index,
                );
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Rope { x, heads, positions } => {
                let dx = rope_apply(gd, g.cols(), *heads, positions, -T::one());
                self.accumulate(grads, *x, dx);
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_dx = self.tracked(*x);
                let (dx, dw, db) =
                    conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, *geom, need_dx);
                if need_dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Conv1d { x, w, b } => {
                let tx = self.value(*x);
                let (len, cin) = (tx.rows(), tx.cols());
                let (dx, dw, db) = conv1d_backward(tx.data(), self.value(*w).data(), gd, len, cin, g.cols());
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Unfold { x, geom } => self.accumulate(grads, *x, fold_patches(gd, *geom)),
            Op::Fold { x, geom } => self.accumulate(grads, *x, unfold_patches(gd, *geom)),
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = gd[0] * T::lit(2.0) / T::of_usize(ta.numel());
                let diff: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| c * (x - y)).collect();
                if self.tracked(*b) {
                    self.accumulate(grads, *b, diff.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, diff);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
        }
    }
}
