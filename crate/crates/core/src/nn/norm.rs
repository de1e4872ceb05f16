use super::{join, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[dim], T::one()),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim();
        let rows = x.len() / d;
        let dn = T::from_usize_lossy(d);
        let eps = T::lit(EPS);
        let mut y = vec![T::zero(); x.len()];
        let mut normalized = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                normalized[r * d + j] = xh;
                y[r * d + j] = xh * self.gamma.data()[j] + self.beta.data()[j];
            }
        }
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let d = self.dim();
        let dn = T::from_usize_lossy(d);
        let mut dx = vec![T::zero(); dy.len()];
        let gamma = self.gamma.data();
        for (r, &is) in cache.inv_std.iter().enumerate() {
            let xh = &cache.normalized[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let mut sum_dxh = T::zero();
            let mut sum_dxh_xh = T::zero();
            for j in 0..d {
                grad.gamma.data_mut()[j] = grad.gamma.data()[j] + g[j] * xh[j];
                grad.beta.data_mut()[j] = grad.beta.data()[j] + g[j];
                let dxh = g[j] * gamma[j];
                sum_dxh = sum_dxh + dxh;
                sum_dxh_xh = sum_dxh_xh + dxh * xh[j];
            }
            for j in 0..d {
                let dxh = g[j] * gamma[j];
                dx[r * d + j] = is / dn * (dn * dxh - sum_dxh - xh[j] * sum_dxh_xh);
            }
        }
        dx
    }
}

impl<T: Scalar> ParamSet<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}
