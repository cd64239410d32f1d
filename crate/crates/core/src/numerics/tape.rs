//! Reverse-mode differentiation over batched layer kernels.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter as
//! borrowed leaves so large tables are never copied; [`Tape::backward`] then
//! walks the record in reverse and returns one gradient per node.

use std::borrow::Cow;

use super::ops::{sigmoid_scalar, softmax_in_place};
use super::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Gather { src: Var, index: Vec<usize> },
    Stack3 { parts: [Var; 3] },
    Mask { x: Var, mask: Vec<T> },
    ConvStride3 { x: Var, kernels: Var, bias: Var },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Affine { x: Var, w: Var, b: Option<Var> },
    SoftmaxMid(Var),
    AttnPool { attn: Var, values: Var },
    Conv1dRows { x: Var, w: Var, b: Var, width: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    MeanPool(Var),
    Mean2(Var, Var),
    Bce { p: Var, targets: Vec<T> },
    L1 { a: Var, b: Var },
    Sum(Vec<Var>),
    Scale(Var, T),
    Dot { x: Var, weights: Vec<T> },
    Reshape(Var),
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    clamp: T,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// contribute.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.slots[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots[v.0].as_ref()
    }
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            clamp: T::of(1e-12),
        }
    }

    /// Probability floor applied before logarithms in [`Tape::bce`].
    pub fn with_clamp(mut self, clamp: T) -> Self {
        self.clamp = clamp;
        self
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Borrowed leaf; used for parameters.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Selects rows (slices along the first axis) of `src`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Var {
        let s = self.value(src);
        let w = s.row_len();
        let mut data = Vec::with_capacity(index.len() * w);
        for &i in index {
            data.extend_from_slice(s.row(i));
        }
        let mut shape = s.shape().to_vec();
        shape[0] = index.len();
        let out = Tensor::from_vec(&shape, data).expect("gather shape");
        self.push(
            out,
            Op::Gather {
                src,
                index: index.to_vec(),
            },
        )
    }

    /// Stacks three `[B, k]` blocks into `[B, 3, k]`.
    pub fn stack3(&mut self, a: Var, b: Var, c: Var) -> Var {
        let (ta, tb, tc) = (self.value(a), self.value(b), self.value(c));
        let (n, k) = (ta.rows(), ta.row_len());
        assert!(
            tb.shape() == ta.shape() && tc.shape() == ta.shape(),
            "stack3 shape mismatch"
        );
        let mut data = Vec::with_capacity(3 * n * k);
        for i in 0..n {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
            data.extend_from_slice(tc.row(i));
        }
        let out = Tensor::from_vec(&[n, 3, k], data).expect("stack3 shape");
        self.push(out, Op::Stack3 { parts: [a, b, c] })
    }

    /// Elementwise multiplication by a fixed mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Option<Vec<T>>) -> Var {
        let Some(mask) = mask else { return x };
        let mut out = self.value(x).clone();
        assert_eq!(out.len(), mask.len(), "mask length");
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(out, Op::Mask { x, mask })
    }

    /// Stride-3 triplet convolution, flattened channel-major to `[B, n_k * w]`.
    pub fn conv_stride3(&mut self, x: Var, kernels: Var, bias: Var) -> Var {
        let xt = self.value(x);
        let (b, k) = (xt.shape()[0], xt.shape()[2]);
        assert_eq!(xt.shape()[1], 3);
        let w = (k - 3) / 3 + 1;
        let kt = self.value(kernels);
        let n_k = kt.rows();
        let bt = self.value(bias).data();
        let xs = xt.data();
        let ks = kt.data();
        let mut out = vec![T::zero(); b * n_k * w];
        let mut patch = [T::zero(); 9];
        for s in 0..b {
            let base = s * 3 * k;
            for j in 0..w {
                for r in 0..3 {
                    let src = base + r * k + 3 * j;
                    patch[r * 3..r * 3 + 3].copy_from_slice(&xs[src..src + 3]);
                }
                for c in 0..n_k {
                    let kern = &ks[c * 9..c * 9 + 9];
                    let mut acc = bt[c];
                    for q in 0..9 {
                        acc += kern[q] * patch[q];
                    }
                    out[s * n_k * w + c * w + j] = acc;
                }
            }
        }
        let out = Tensor::from_vec(&[b, n_k * w], out).expect("conv shape");
        self.push(out, Op::ConvStride3 { x, kernels, bias })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v <= T::zero() { T::zero() } else { v });
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid(x))
    }

    /// `x · W (+ b)` over the last axis of `x`; leading axes are kept.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let m = *xt.shape().last().unwrap();
        assert_eq!(wt.shape(), &[m, wt.shape()[1]], "affine weight shape");
        let n = wt.shape()[1];
        let rows = xt.len() / m;
        let mut out = vec![T::zero(); rows * n];
        let mut beta = T::zero();
        if let Some(b) = b {
            let bt = self.value(b).data();
            assert_eq!(bt.len(), n, "affine bias length");
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bt);
            }
            beta = T::one();
        }
        T::gemm(
            rows,
            m,
            n,
            T::one(),
            xt.data(),
            m as isize,
            1,
            wt.data(),
            n as isize,
            1,
            beta,
            &mut out,
            n as isize,
            1,
        );
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::from_vec(&shape, out).expect("affine shape");
        self.push(out, Op::Affine { x, w, b })
    }

    /// Softmax over axis 1 of a `[B, L, A]` tensor.
    pub fn softmax_mid(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (b, l, a) = dims3(xt.shape());
        let mut out = xt.clone();
        let mut col = vec![T::zero(); l];
        let data = out.data_mut();
        for s in 0..b {
            for j in 0..a {
                for i in 0..l {
                    col[i] = data[(s * l + i) * a + j];
                }
                softmax_in_place(&mut col);
                for i in 0..l {
                    data[(s * l + i) * a + j] = col[i];
                }
            }
        }
        self.push(out, Op::SoftmaxMid(x))
    }

    /// `out[b] = attn[b]ᵀ · values[b]` with attn `[B, L, A]`, values `[B, L, D]`.
    pub fn attn_pool(&mut self, attn: Var, values: Var) -> Var {
        let at = self.value(attn);
        let vt = self.value(values);
        let (b, l, a) = dims3(at.shape());
        let (_, l2, d) = dims3(vt.shape());
        assert_eq!(l, l2, "attn_pool length mismatch");
        let mut out = vec![T::zero(); b * a * d];
        for s in 0..b {
            T::gemm(
                a,
                l,
                d,
                T::one(),
                &at.data()[s * l * a..],
                1,
                a as isize,
                &vt.data()[s * l * d..],
                d as isize,
                1,
                T::zero(),
                &mut out[s * a * d..],
                d as isize,
                1,
            );
        }
        let out = Tensor::from_vec(&[b, a, d], out).expect("attn shape");
        self.push(out, Op::AttnPool { attn, values })
    }

    /// 1-D convolution along axis 1 of `[B, P, C]`: each output position
    /// reads `width` consecutive rows in full. `w` is `[width * C, F]`.
    pub fn conv1d_rows(&mut self, x: Var, w: Var, b: Var, width: usize) -> Var {
        let xt = self.value(x);
        let (bs, p, c) = dims3(xt.shape());
        let wt = self.value(w);
        assert!(width >= 1 && width <= p, "conv1d window {width} exceeds length {p}");
        assert_eq!(wt.shape()[0], width * c, "conv1d weight rows");
        let f = wt.shape()[1];
        let po = p - width + 1;
        let bias = self.value(b).data();
        let mut out = vec![T::zero(); bs * po * f];
        for row in out.chunks_mut(f) {
            row.copy_from_slice(bias);
        }
        for s in 0..bs {
            // Overlapping windows are rows of a strided view with row stride C.
            T::gemm(
                po,
                width * c,
                f,
                T::one(),
                &xt.data()[s * p * c..],
                c as isize,
                1,
                wt.data(),
                f as isize,
                1,
                T::one(),
                &mut out[s * po * f..],
                f as isize,
                1,
            );
        }
        let out = Tensor::from_vec(&[bs, po, f], out).expect("conv1d shape");
        self.push(out, Op::Conv1dRows { x, w, b, width })
    }

    /// Non-overlapping max pooling along axis 1 of `[B, P, F]`.
    pub fn max_pool(&mut self, x: Var, window: usize) -> Var {
        assert!(window > 0);
        let xt = self.value(x);
        let (b, p, f) = dims3(xt.shape());
        let po = p.div_ceil(window);
        let mut out = vec![T::zero(); b * po * f];
        let mut argmax = vec![0usize; b * po * f];
        let xs = xt.data();
        for s in 0..b {
            for o in 0..po {
                for j in 0..f {
                    let mut best = T::neg_infinity();
                    let mut at = 0;
                    for i in o * window..((o + 1) * window).min(p) {
                        let idx = (s * p + i) * f + j;
                        if xs[idx] > best || xs[idx].is_nan() {
                            best = xs[idx];
                            at = idx;
                        }
                    }
                    out[(s * po + o) * f + j] = best;
                    argmax[(s * po + o) * f + j] = at;
                }
            }
        }
        let out = Tensor::from_vec(&[b, po, f], out).expect("pool shape");
        self.push(out, Op::MaxPool { x, argmax })
    }

    /// Mean over axis 1 of `[B, P, F]`, giving `[B, F]`.
    pub fn mean_pool(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (b, p, f) = dims3(xt.shape());
        let mut out = vec![T::zero(); b * f];
        let scale = T::one() / T::of(p as f64);
        for s in 0..b {
            for i in 0..p {
                let row = &xt.data()[(s * p + i) * f..(s * p + i + 1) * f];
                for (o, &v) in out[s * f..(s + 1) * f].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let out = Tensor::from_vec(&[b, f], out).expect("mean shape");
        self.push(out, Op::MeanPool(x))
    }

    /// Elementwise `0.5 * (a + b)`.
    pub fn mean2(&mut self, a: Var, b: Var) -> Var {
        let half = T::of(0.5);
        let ta = self.value(a);
        let tb = self.value(b);
        assert_eq!(ta.len(), tb.len());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| half * (x + y)).collect();
        let out = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(out, Op::Mean2(a, b))
    }

    /// Summed binary cross-entropy of probabilities `p` against `targets`.
    /// Probabilities are clamped to `[c, 1 - c]` before the logarithm.
    pub fn bce(&mut self, p: Var, targets: Vec<T>) -> Var {
        let pt = self.value(p);
        assert_eq!(pt.len(), targets.len(), "bce target count");
        let (lo, hi) = (self.clamp, T::one() - self.clamp);
        let mut loss = T::zero();
        for (&s, &y) in pt.data().iter().zip(&targets) {
            let s = if s.is_nan() { s } else { s.max(lo).min(hi) };
            loss -= y * s.ln() + (T::one() - y) * (T::one() - s).ln();
        }
        let out = Tensor::from_vec(&[1], vec![loss]).unwrap();
        self.push(out, Op::Bce { p, targets })
    }

    /// `Σ |a - b|` over all entries.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let v = super::ops::l1_distance(self.value(a).data(), self.value(b).data());
        let out = Tensor::from_vec(&[1], vec![v]).unwrap();
        self.push(out, Op::L1 { a, b })
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]);
        let mut out = first.clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape).expect("reshape size");
        self.push(out, Op::Reshape(x))
    }

    /// Scalar `Σ weights ⊙ x`.
    pub fn dot(&mut self, x: Var, weights: Vec<T>) -> Var {
        let xt = self.value(x);
        assert_eq!(xt.len(), weights.len(), "dot length");
        let v = xt.data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        let out = Tensor::from_vec(&[1], vec![v]).unwrap();
        self.push(out, Op::Dot { x, weights })
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let n = self.nodes.len();
        let mut slots: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = slots[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    slots[i] = Some(g);
                    continue;
                }
                Op::Gather { src, index } => {
                    let mut acc = self.acc(&mut slots, *src);
                    let w = acc.row_len();
                    for (r, &i) in index.iter().enumerate() {
                        let dst = acc.row_mut(i);
                        for (d, &v) in dst.iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                            *d += v;
                        }
                    }
                    slots[src.0] = Some(acc);
                }
                Op::Stack3 { parts } => {
                    let (b, k) = (g.shape()[0], g.shape()[2]);
                    for (slot, part) in parts.iter().enumerate() {
                        let mut acc = self.acc(&mut slots, *part);
                        for s in 0..b {
                            let src = &g.data()[(s * 3 + slot) * k..(s * 3 + slot + 1) * k];
                            for (d, &v) in acc.row_mut(s).iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                        slots[part.0] = Some(acc);
                    }
                }
                Op::Mask { x, mask } => {
                    let mut acc = self.acc(&mut slots, *x);
                    for ((d, &gv), &m) in acc.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *d += gv * m;
                    }
                    slots[x.0] = Some(acc);
                }
                Op::ConvStride3 { x, kernels, bias } => {
                    self.back_conv_stride3(&mut slots, &g, *x, *kernels, *bias);
                }
                Op::Relu(x) => {
                    let mut acc = self.acc(&mut slots, *x);
                    let out = &node.value;
                    for ((d, &gv), &o) in acc.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        if o > T::zero() {
                            *d += gv;
                        }
                    }
                    slots[x.0] = Some(acc);
                }
                Op::Tanh(x) => {
                    let mut acc = self.acc(&mut slots, *x);
                    let out = &node.value;
                    for ((d, &gv), &o) in acc.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *d += gv * (T::one() - o * o);
                    }
                    slots[x.0] = Some(acc);
                }
                Op::Sigmoid(x) => {
                    let mut acc = self.acc(&mut slots, *x);
                    let out = &node.value;
                    for ((d, &gv), &o) in acc.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *d += gv * o * (T::one() - o);
                    }
                    slots[x.0] = Some(acc);
                }
                Op::Affine { x, w, b } => self.back_affine(&mut slots, &g, *x, *w, *b),
                Op::SoftmaxMid(x) => {
                    let mut acc = self.acc(&mut slots, *x);
                    let out = &node.value;
                    let (b, l, a) = dims3(out.shape());
                    let (o, gd) = (out.data(), g.data());
                    let ad = acc.data_mut();
                    for s in 0..b {
                        for j in 0..a {
                            let mut dot = T::zero();
                            for i in 0..l {
                                let idx = (s * l + i) * a + j;
                                dot += o[idx] * gd[idx];
                            }
                            for i in 0..l {
                                let idx = (s * l + i) * a + j;
                                ad[idx] += o[idx] * (gd[idx] - dot);
                            }
                        }
                    }
                    slots[x.0] = Some(acc);
                }
                Op::AttnPool { attn, values } => {
                    let at = self.value(*attn);
                    let vt = self.value(*values);
                    let (b, l, a) = dims3(at.shape());
                    let d = vt.shape()[2];
                    let mut da = self.acc(&mut slots, *attn);
                    for s in 0..b {
                        // dA[l, a] = V[l, :] · G[a, :]ᵀ
                        T::gemm(
                            l,
                            d,
                            a,
                            T::one(),
                            &vt.data()[s * l * d..],
                            d as isize,
                            1,
                            &g.data()[s * a * d..],
                            1,
                            d as isize,
                            T::one(),
                            &mut da.data_mut()[s * l * a..],
                            a as isize,
                            1,
                        );
                    }
                    slots[attn.0] = Some(da);
                    let mut dv = self.acc(&mut slots, *values);
                    for s in 0..b {
                        // dV[l, d] = A[l, :] · G[:, d]
                        T::gemm(
                            l,
                            a,
                            d,
                            T::one(),
                            &at.data()[s * l * a..],
                            a as isize,
                            1,
                            &g.data()[s * a * d..],
                            d as isize,
                            1,
                            T::one(),
                            &mut dv.data_mut()[s * l * d..],
                            d as isize,
                            1,
                        );
                    }
                    slots[values.0] = Some(dv);
                }
                Op::Conv1dRows { x, w, b, width } => {
                    self.back_conv1d(&mut slots, &g, *x, *w, *b, *width);
                }
                Op::MaxPool { x, argmax } => {
                    let mut acc = self.acc(&mut slots, *x);
                    for (&at, &gv) in argmax.iter().zip(g.data()) {
                        acc.data_mut()[at] += gv;
                    }
                    slots[x.0] = Some(acc);
                }
                Op::MeanPool(x) => {
                    let mut acc = self.acc(&mut slots, *x);
                    let (b, p, f) = dims3(self.value(*x).shape());
                    let scale = T::one() / T::of(p as f64);
                    for s in 0..b {
                        for i in 0..p {
                            let dst = &mut acc.data_mut()[(s * p + i) * f..(s * p + i + 1) * f];
                            for (d, &gv) in dst.iter_mut().zip(&g.data()[s * f..(s + 1) * f]) {
                                *d += gv * scale;
                            }
                        }
                    }
                    slots[x.0] = Some(acc);
                }
                Op::Mean2(a, b) => {
                    let half = T::of(0.5);
                    for v in [*a, *b] {
                        let mut acc = self.acc(&mut slots, v);
                        for (d, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                            *d += half * gv;
                        }
                        slots[v.0] = Some(acc);
                    }
                }
                Op::Bce { p, targets } => {
                    let g0 = g.data()[0];
                    let (lo, hi) = (self.clamp, T::one() - self.clamp);
                    let mut acc = self.acc(&mut slots, *p);
                    let pv = self.value(*p).data();
                    for ((d, &s), &y) in acc.data_mut().iter_mut().zip(pv).zip(targets) {
                        if s > lo && s < hi {
                            *d += g0 * (s - y) / (s * (T::one() - s));
                        }
                    }
                    slots[p.0] = Some(acc);
                }
                Op::L1 { a, b } => {
                    let g0 = g.data()[0];
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let sign: Vec<T> = av
                        .iter()
                        .zip(bv)
                        .map(|(&x, &y)| {
                            if x > y {
                                g0
                            } else if x < y {
                                -g0
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let mut da = self.acc(&mut slots, *a);
                    for (d, &s) in da.data_mut().iter_mut().zip(&sign) {
                        *d += s;
                    }
                    slots[a.0] = Some(da);
                    let mut db = self.acc(&mut slots, *b);
                    for (d, &s) in db.data_mut().iter_mut().zip(&sign) {
                        *d -= s;
                    }
                    slots[b.0] = Some(db);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        let mut acc = self.acc(&mut slots, p);
                        acc.add_assign(&g);
                        slots[p.0] = Some(acc);
                    }
                }
                Op::Dot { x, weights } => {
                    let g0 = g.data()[0];
                    let mut acc = self.acc(&mut slots, *x);
                    for (d, &w) in acc.data_mut().iter_mut().zip(weights) {
                        *d += g0 * w;
                    }
                    slots[x.0] = Some(acc);
                }
                Op::Reshape(x) => {
                    let mut acc = self.acc(&mut slots, *x);
                    for (d, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                    slots[x.0] = Some(acc);
                }
                Op::Scale(x, c) => {
                    let mut acc = self.acc(&mut slots, *x);
                    for (d, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *d += gv * *c;
                    }
                    slots[x.0] = Some(acc);
                }
            }
        }

        Grads {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            slots,
        }
    }

    // Takes the running gradient for `v`, or a zero tensor of its shape.
    fn acc(&self, slots: &mut [Option<Tensor<T>>], v: Var) -> Tensor<T> {
        slots[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    fn back_conv_stride3(&self, slots: &mut [Option<Tensor<T>>], g: &Tensor<T>, x: Var, kernels: Var, bias: Var) {
        let xt = self.value(x);
        let kt = self.value(kernels);
        let (b, k) = (xt.shape()[0], xt.shape()[2]);
        let w = (k - 3) / 3 + 1;
        let n_k = kt.rows();
        let (xs, ks, gs) = (xt.data(), kt.data(), g.data());

        let mut dx = self.acc(slots, x);
        let mut dk = self.acc(slots, kernels);
        let mut db = self.acc(slots, bias);
        let mut patch = [T::zero(); 9];
        for s in 0..b {
            let base = s * 3 * k;
            for j in 0..w {
                for r in 0..3 {
                    let src = base + r * k + 3 * j;
                    patch[r * 3..r * 3 + 3].copy_from_slice(&xs[src..src + 3]);
                }
                let mut dpatch = [T::zero(); 9];
                for c in 0..n_k {
                    let gv = gs[s * n_k * w + c * w + j];
                    if gv == T::zero() {
                        continue;
                    }
                    db.data_mut()[c] += gv;
                    let dkern = &mut dk.data_mut()[c * 9..c * 9 + 9];
                    let kern = &ks[c * 9..c * 9 + 9];
                    for q in 0..9 {
                        dkern[q] += gv * patch[q];
                        dpatch[q] += gv * kern[q];
                    }
                }
                let dxs = dx.data_mut();
                for r in 0..3 {
                    let dst = base + r * k + 3 * j;
                    for q in 0..3 {
                        dxs[dst + q] += dpatch[r * 3 + q];
                    }
                }
            }
        }
        slots[x.0] = Some(dx);
        slots[kernels.0] = Some(dk);
        slots[bias.0] = Some(db);
    }

    fn back_affine(&self, slots: &mut [Option<Tensor<T>>], g: &Tensor<T>, x: Var, w: Var, b: Option<Var>) {
        let xt = self.value(x);
        let wt = self.value(w);
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        let rows = xt.len() / m;

        // dX = G · Wᵀ
        let mut dx = self.acc(slots, x);
        T::gemm(
            rows,
            n,
            m,
            T::one(),
            g.data(),
            n as isize,
            1,
            wt.data(),
            1,
            n as isize,
            T::one(),
            dx.data_mut(),
            m as isize,
            1,
        );
        slots[x.0] = Some(dx);

        // dW = Xᵀ · G
        let mut dw = self.acc(slots, w);
        T::gemm(
            m,
            rows,
            n,
            T::one(),
            xt.data(),
            1,
            m as isize,
            g.data(),
            n as isize,
            1,
            T::one(),
            dw.data_mut(),
            n as isize,
            1,
        );
        slots[w.0] = Some(dw);

        if let Some(b) = b {
            let mut db = self.acc(slots, b);
            for row in g.data().chunks(n) {
                for (d, &v) in db.data_mut().iter_mut().zip(row) {
                    *d += v;
                }
            }
            slots[b.0] = Some(db);
        }
    }

    fn back_conv1d(&self, slots: &mut [Option<Tensor<T>>], g: &Tensor<T>, x: Var, w: Var, b: Var, width: usize) {
        let xt = self.value(x);
        let wt = self.value(w);
        let (bs, p, c) = dims3(xt.shape());
        let f = wt.shape()[1];
        let po = p - width + 1;
        let wc = width * c;

        let mut dw = self.acc(slots, w);
        for s in 0..bs {
            // dW += windowsᵀ · G
            T::gemm(
                wc,
                po,
                f,
                T::one(),
                &xt.data()[s * p * c..],
                1,
                c as isize,
                &g.data()[s * po * f..],
                f as isize,
                1,
                T::one(),
                dw.data_mut(),
                f as isize,
                1,
            );
        }
        slots[w.0] = Some(dw);

        let mut db = self.acc(slots, b);
        for row in g.data().chunks(f) {
            for (d, &v) in db.data_mut().iter_mut().zip(row) {
                *d += v;
            }
        }
        slots[b.0] = Some(db);

        let mut dx = self.acc(slots, x);
        let mut dwin = vec![T::zero(); po * wc];
        for s in 0..bs {
            // dWindows = G · Wᵀ, then scatter-add the overlapping rows.
            T::gemm(
                po,
                f,
                wc,
                T::one(),
                &g.data()[s * po * f..],
                f as isize,
                1,
                wt.data(),
                1,
                f as isize,
                T::zero(),
                &mut dwin,
                wc as isize,
                1,
            );
            let dst = &mut dx.data_mut()[s * p * c..(s + 1) * p * c];
            for o in 0..po {
                for (d, &v) in dst[o * c..o * c + wc].iter_mut().zip(&dwin[o * wc..(o + 1) * wc]) {
                    *d += v;
                }
            }
        }
        slots[x.0] = Some(dx);
    }
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected a rank-3 tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}
