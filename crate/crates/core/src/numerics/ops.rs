//! Single-sample layer operations.
//!
//! These are the reference forms of every layer the models use. The batched
//! kernels on the [`Tape`](super::Tape) compute the same quantities and are
//! tested against these.

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Output width of a stride-3, width-3 convolution over `k` columns.
pub fn conv_width(k: usize) -> Result<usize> {
    if k < 3 {
        return Err(Error::Shape(format!(
            "triplet convolution needs at least 3 columns, got {k}"
        )));
    }
    Ok((k - 3) / 3 + 1)
}

/// Convolves a 3×k matrix with `n_k` 3×3 kernels, stride 3, no padding.
///
/// `kernels` has shape `[n_k, 3, 3]` (or `[n_k, 9]`), `bias` has `n_k`
/// entries. Output is `[n_k, w]` with `w = floor((k-3)/3) + 1`.
pub fn conv_stride3<T: Real>(m: &Tensor<T>, kernels: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    if m.shape().len() != 2 || m.shape()[0] != 3 {
        return Err(Error::Shape(format!("expected a 3×k matrix, got {:?}", m.shape())));
    }
    let k = m.shape()[1];
    let w = conv_width(k)?;
    let n_k = kernels.rows();
    if kernels.row_len() != 9 || bias.len() != n_k {
        return Err(Error::Shape(format!(
            "kernels {:?} / bias {} do not describe 3×3 filters",
            kernels.shape(),
            bias.len()
        )));
    }
    let x = m.data();
    let mut out = Tensor::zeros(&[n_k, w]);
    for c in 0..n_k {
        let kern = kernels.row(c);
        for j in 0..w {
            let mut acc = bias[c];
            for r in 0..3 {
                for dc in 0..3 {
                    acc += kern[r * 3 + dc] * x[r * k + 3 * j + dc];
                }
            }
            out.data_mut()[c * w + j] = acc;
        }
    }
    Ok(out)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v <= T::zero() { T::zero() } else { v })
}

/// Logistic function, kept strictly inside (0, 1).
#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    if s.is_nan() {
        return s;
    }
    s.max(T::min_positive_value()).min(one - T::epsilon())
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(T::tanh)
}

/// `x · W + b` for a single row `x` of length m, `W` m×n, `b` of length n.
pub fn affine<T: Real>(x: &[T], w: &Tensor<T>, b: &[T]) -> Result<Vec<T>> {
    if w.shape().len() != 2 || w.shape()[0] != x.len() || w.shape()[1] != b.len() {
        return Err(Error::Shape(format!(
            "affine: x has {} entries, W is {:?}, b has {}",
            x.len(),
            w.shape(),
            b.len()
        )));
    }
    let mut out = b.to_vec();
    T::gemm(
        1,
        x.len(),
        b.len(),
        T::one(),
        x,
        x.len() as isize,
        1,
        w.data(),
        b.len() as isize,
        1,
        T::one(),
        &mut out,
        b.len() as isize,
        1,
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout multiplier mask: each entry is 0 with probability `p`,
/// otherwise `1/(1-p)`. Returns `None` when the layer is the identity.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, p: f64, mode: Mode, rng: &mut R) -> Option<Vec<T>> {
    if mode == Mode::Eval || p <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - p));
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect(),
    )
}

pub fn dropout<T: Real, R: Rng + ?Sized>(x: &Tensor<T>, p: f64, mode: Mode, rng: &mut R) -> Tensor<T> {
    match dropout_mask::<T, R>(x.len(), p, mode, rng) {
        None => x.clone(),
        Some(mask) => {
            let mut out = x.clone();
            for (v, m) in out.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            out
        }
    }
}

/// Numerically stable softmax over a slice, in place.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let w = out.row_len();
    if w > 0 {
        for row in out.data_mut().chunks_mut(w) {
            softmax_in_place(row);
        }
    }
    out
}

/// Non-overlapping max pooling; a trailing partial window is kept.
pub fn max_pool_1d<T: Real>(x: &[T], window: usize) -> Vec<T> {
    assert!(window > 0, "pool window must be positive");
    x.chunks(window)
        .map(|c| {
            c.iter()
                .copied()
                .fold(T::neg_infinity(), |m, v| if v > m || v.is_nan() { v } else { m })
        })
        .collect()
}

/// Mean of the rows of a matrix (one value per column).
pub fn mean_pool_rows<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let rows = x.rows();
    let w = x.row_len();
    let mut out = vec![T::zero(); w];
    for i in 0..rows {
        for (o, &v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    let n = T::of(rows as f64);
    out.iter_mut().for_each(|o| *o = *o / n);
    out
}

pub fn l1_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}
