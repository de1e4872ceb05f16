//! Layer library with explicit forward caches and hand-derived backward
//! passes. Every layer is generic over [`Scalar`] so the same code runs in
//! `f32` for training and `f64` for finite-difference checks.
//!
//! Gradient buffers reuse the layer types themselves: a zeroed clone of a
//! layer accumulates its gradients.

mod attention;
mod conv;
mod encoder;
mod linear;
mod norm;

pub use attention::{attend, attend_backward, self_attention, MultiHeadAttention, MultiHeadCache};
pub use conv::{AdaptiveAvgPool, CnnEncoder, CnnCache, Conv2d, ConvCache, ResBlock};
pub use encoder::{EncoderCache, EncoderOutput, TransformerEncoder};
pub use linear::{Linear, Mlp, MlpCache};
pub use norm::{LayerNorm, LayerNormCache};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named traversal over every trainable tensor of a parameter container.
///
/// `visit` and `visit_mut` must enumerate tensors in the same order; the
/// optimizer and checkpoint code rely on it.
pub trait ParamSet<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(T::zero()));
        z
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Adds `other` elementwise. Both containers must share structure.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut src = Vec::new();
        other.visit("", &mut |_, t| src.push(t.data().to_vec()));
        let mut idx = 0;
        self.visit_mut("", &mut |_, t| {
            crate::kernels::add_into(t.data_mut(), &src[idx]);
            idx += 1;
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Fan-in scaled uniform initialization, `U(-1/√fan_in, 1/√fan_in)`.
pub(crate) fn fan_in_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

/// He initialization for ReLU layers, `U(-√(6/fan_in), √(6/fan_in))`.
pub(crate) fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

pub(crate) fn small_normal<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data)
}

#[inline]
pub(crate) fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the post-activation value is not positive.
#[inline]
pub(crate) fn relu_backward_inplace<T: Scalar>(grad: &mut [T], activated: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Mean over the rows of an `n × d` buffer.
pub fn mean_pool<T: Scalar>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d];
    for row in x.chunks(d) {
        crate::kernels::add_into(&mut out, row);
    }
    let inv = T::one() / T::from_usize_lossy(n);
    out.iter_mut().for_each(|v| *v = *v * inv);
    out
}

/// Appends a single column `col` (length `n`) to an `n × d` buffer.
pub fn concat_column<T: Scalar>(x: &[T], n: usize, d: usize, col: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        out.extend_from_slice(&x[i * d..(i + 1) * d]);
        out.push(col[i]);
    }
    out
}

/// Splits the gradient of [`concat_column`] back into its two inputs.
pub fn split_column_grad<T: Scalar>(g: &[T], n: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let mut gx = Vec::with_capacity(n * d);
    let mut gc = Vec::with_capacity(n);
    for i in 0..n {
        let row = &g[i * (d + 1)..(i + 1) * (d + 1)];
        gx.extend_from_slice(&row[..d]);
        gc.push(row[d]);
    }
    (gx, gc)
}
