use rand::Rng;

use super::{fan_in_uniform, join, Linear, ParamSet};
use crate::error::{shape_err, Result};
use crate::kernels::{add_into, mm_nn, mm_nt, mm_tn};
use crate::scalar::{softmax_rows, Scalar};
use crate::tensor::Tensor;

/// Scaled dot-product attention for one head.
///
/// `q`, `k`, `v` are `n × dk`. Returns `(A·V, A)` with
/// `A = softmax_rows(Q·Kᵀ / √dk)`.
pub fn attend<T: Scalar>(q: &[T], k: &[T], v: &[T], n: usize, dk: usize) -> (Vec<T>, Vec<T>) {
    let mut a = vec![T::zero(); n * n];
    mm_nt(q, k, &mut a, n, dk, n);
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    a.iter_mut().for_each(|s| *s = *s * scale);
    softmax_rows(&mut a, n);
    let mut out = vec![T::zero(); n * dk];
    mm_nn(&a, v, &mut out, n, n, dk);
    (out, a)
}

/// Gradients of [`attend`] with respect to `(q, k, v)`.
pub fn attend_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    a: &[T],
    d_out: &[T],
    n: usize,
    dk: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut da = vec![T::zero(); n * n];
    mm_nt(d_out, v, &mut da, n, dk, n);
    let mut dv = vec![T::zero(); n * dk];
    mm_tn(a, d_out, &mut dv, n, n, dk);

    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut ds = vec![T::zero(); n * n];
    for i in 0..n {
        let ar = &a[i * n..(i + 1) * n];
        let dr = &da[i * n..(i + 1) * n];
        let inner = crate::scalar::dot(ar, dr);
        for j in 0..n {
            ds[i * n + j] = ar[j] * (dr[j] - inner) * scale;
        }
    }
    let mut dq = vec![T::zero(); n * dk];
    mm_nn(&ds, k, &mut dq, n, n, dk);
    let mut dkk = vec![T::zero(); n * dk];
    mm_tn(&ds, q, &mut dkk, n, n, dk);
    (dq, dkk, dv)
}

/// Single-head self-attention over tokens `z` (`n × d`) with projections
/// `w_q`, `w_k`, `w_v` stored `d × dk`. Returns `(A·V, A)`.
pub fn self_attention<T: Scalar>(
    z: &[T],
    n: usize,
    d: usize,
    w_q: &[T],
    w_k: &[T],
    w_v: &[T],
    dk: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    if dk == 0 {
        return Err(shape_err("key dimension must be positive"));
    }
    if z.len() != n * d {
        return Err(shape_err(format!("tokens have {} values, expected {n}×{d}", z.len())));
    }
    for (name, w) in [("W_Q", w_q), ("W_K", w_k), ("W_V", w_v)] {
        if w.len() != d * dk {
            return Err(shape_err(format!("{name} has {} values, expected {d}×{dk}", w.len())));
        }
    }
    let project = |w: &[T]| {
        let mut out = vec![T::zero(); n * dk];
        mm_nn(z, w, &mut out, n, d, dk);
        out
    };
    let (q, k, v) = (project(w_q), project(w_k), project(w_v));
    Ok(attend(&q, &k, &v, n, dk))
}

/// Multi-head self-attention with an output projection back to the token
/// width. Q/K/V projections carry no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub out: Linear<T>,
    pub heads: usize,
    pub head_dim: usize,
}

#[derive(Clone, Debug)]
pub struct MultiHeadCache<T> {
    input: Vec<T>,
    /// Per-head `(q, k, v, a)`, each head-contiguous.
    heads: Vec<[Vec<T>; 4]>,
    concat: Vec<T>,
    n: usize,
}

impl<T> MultiHeadCache<T> {
    pub fn head_attention(&self, h: usize) -> &[T] {
        &self.heads[h][3]
    }
}

fn gather_head<T: Scalar>(x: &[T], n: usize, width: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&x[i * width + h * dh..i * width + (h + 1) * dh]);
    }
    out
}

fn scatter_head<T: Scalar>(dst: &mut [T], src: &[T], n: usize, width: usize, h: usize, dh: usize) {
    for i in 0..n {
        dst[i * width + h * dh..i * width + (h + 1) * dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new<R: Rng>(dim: usize, heads: usize, head_dim: usize, rng: &mut R) -> Self {
        let inner = heads * head_dim;
        Self {
            w_q: fan_in_uniform(&[dim, inner], dim, rng),
            w_k: fan_in_uniform(&[dim, inner], dim, rng),
            w_v: fan_in_uniform(&[dim, inner], dim, rng),
            out: Linear::new(inner, dim, rng),
            heads,
            head_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    /// Returns the projected output (`n × dim`) and the head-averaged
    /// attention matrix (`n × n`).
    pub fn forward(&self, x: &[T], n: usize) -> (Vec<T>, Vec<T>, MultiHeadCache<T>) {
        let d = self.dim();
        let inner = self.heads * self.head_dim;
        let dh = self.head_dim;
        let project = |w: &Tensor<T>| {
            let mut out = vec![T::zero(); n * inner];
            mm_nn(x, w.data(), &mut out, n, d, inner);
            out
        };
        let (q, k, v) = (project(&self.w_q), project(&self.w_k), project(&self.w_v));
        let mut concat = vec![T::zero(); n * inner];
        let mut mean_a = vec![T::zero(); n * n];
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = gather_head(&q, n, inner, h, dh);
            let kh = gather_head(&k, n, inner, h, dh);
            let vh = gather_head(&v, n, inner, h, dh);
            let (oh, ah) = attend(&qh, &kh, &vh, n, dh);
            scatter_head(&mut concat, &oh, n, inner, h, dh);
            add_into(&mut mean_a, &ah);
            heads.push([qh, kh, vh, ah]);
        }
        let inv = T::one() / T::from_usize_lossy(self.heads);
        mean_a.iter_mut().for_each(|v| *v = *v * inv);
        let y = self.out.forward(&concat, n);
        (
            y,
            mean_a,
            MultiHeadCache {
                input: x.to_vec(),
                heads,
                concat,
                n,
            },
        )
    }

    pub fn backward(&self, cache: &MultiHeadCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let n = cache.n;
        let d = self.dim();
        let inner = self.heads * self.head_dim;
        let dh = self.head_dim;
        let d_concat = self.out.backward(&cache.concat, n, dy, &mut grad.out);
        let mut dq = vec![T::zero(); n * inner];
        let mut dk = vec![T::zero(); n * inner];
        let mut dv = vec![T::zero(); n * inner];
        for (h, [qh, kh, vh, ah]) in cache.heads.iter().enumerate() {
            let doh = gather_head(&d_concat, n, inner, h, dh);
            let (gq, gk, gv) = attend_backward(qh, kh, vh, ah, &doh, n, dh);
            scatter_head(&mut dq, &gq, n, inner, h, dh);
            scatter_head(&mut dk, &gk, n, inner, h, dh);
            scatter_head(&mut dv, &gv, n, inner, h, dh);
        }
        let x = &cache.input;
        mm_tn(x, &dq, grad.w_q.data_mut(), d, n, inner);
        mm_tn(x, &dk, grad.w_k.data_mut(), d, n, inner);
        mm_tn(x, &dv, grad.w_v.data_mut(), d, n, inner);
        let mut dx = vec![T::zero(); n * d];
        mm_nt(&dq, self.w_q.data(), &mut dx, n, inner, d);
        mm_nt(&dk, self.w_k.data(), &mut dx, n, inner, d);
        mm_nt(&dv, self.w_v.data(), &mut dx, n, inner, d);
        dx
    }
}

impl<T: Scalar> ParamSet<T> for MultiHeadAttention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "w_q"), &self.w_q);
        f(join(prefix, "w_k"), &self.w_k);
        f(join(prefix, "w_v"), &self.w_v);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "w_q"), &mut self.w_q);
        f(join(prefix, "w_k"), &mut self.w_k);
        f(join(prefix, "w_v"), &mut self.w_v);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line softmax written without the shared helpers.
    fn naive_attention(z: &[f64], n: usize, d: usize, wq: &[f64], wk: &[f64], dk: usize) -> Vec<f64> {
        let proj = |w: &[f64]| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..dk).map(|c| (0..d).map(|j| z[i * d + j] * w[j * dk + c]).sum()).collect())
                .collect()
        };
        let (q, k) = (proj(wq), proj(wk));
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| q[i].iter().zip(&k[j]).map(|(x, y)| x * y).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let denom: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..n {
                a[i * n + j] = scores[j].exp() / denom;
            }
        }
        a
    }

    #[test]
    fn zero_tokens_give_uniform_attention() {
        let z = vec![0.0f64; 5 * 3];
        let w = vec![0.3f64; 3 * 2];
        let (_, a) = self_attention(&z, 5, 3, &w, &w, &w, 2).unwrap();
        assert!(a.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn two_token_closed_form() {
        // One-hot tokens with q = (1, 0) and k = (0, ln3) give scores
        // [[0, ln3], [0, 0]] at d_k = 1.
        let z = vec![1.0f64, 0.0, 0.0, 1.0];
        let w_q = vec![1.0, 0.0];
        let w_k = vec![0.0, 3f64.ln()];
        let (_, a) = self_attention(&z, 2, 2, &w_q, &w_k, &w_q, 1).unwrap();
        assert!((a[0] - 0.25).abs() < 1e-12);
        assert!((a[1] - 0.75).abs() < 1e-12);
        assert!((a[2] - 0.5).abs() < 1e-12 && (a[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_softmax_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, d, dk) = (5, 4, 3);
        let z: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let wq: Vec<f64> = (0..d * dk).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wk: Vec<f64> = (0..d * dk).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..d * dk).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, a) = self_attention(&z, n, d, &wq, &wk, &wv, dk).unwrap();
        let want = naive_attention(&z, n, d, &wq, &wk, dk);
        for (x, y) in a.iter().zip(&want) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let z = vec![0.0f64; 6];
        let w = vec![0.0f64; 4];
        assert!(self_attention(&z, 2, 3, &w, &w, &w, 2).is_err());
        assert!(self_attention(&z, 2, 3, &w, &w, &w, 0).is_err());
    }
}
