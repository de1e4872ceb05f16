use rand::Rng;

use super::{fan_in_uniform, join, relu_backward_inplace, relu_inplace, ParamSet};
use crate::kernels::{mm_nn, mm_nt, mm_tn};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map `y = x·W + b` applied row-wise; `W` is stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: fan_in_uniform(&[inputs, outputs], inputs, rng),
            bias: fan_in_uniform(&[outputs], inputs, rng),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let (i, o) = (self.inputs(), self.outputs());
        debug_assert_eq!(x.len(), rows * i);
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.data());
        }
        mm_nn(x, self.weight.data(), &mut y, rows, i, o);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &[T], rows: usize, dy: &[T], grad: &mut Self) -> Vec<T> {
        let (i, o) = (self.inputs(), self.outputs());
        mm_tn(x, dy, grad.weight.data_mut(), i, rows, o);
        let gb = grad.bias.data_mut();
        for row in dy.chunks(o) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        let mut dx = vec![T::zero(); rows * i];
        mm_nt(dy, self.weight.data(), &mut dx, rows, o, i);
        dx
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Two-layer perceptron `fc2(relu(fc1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    rows: usize,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(inputs, hidden, rng),
            fc2: Linear::new(hidden, outputs, rng),
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, MlpCache<T>) {
        let mut hidden = self.fc1.forward(x, rows);
        relu_inplace(&mut hidden);
        let y = self.fc2.forward(&hidden, rows);
        (
            y,
            MlpCache {
                input: x.to_vec(),
                hidden,
                rows,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let mut dh = self.fc2.backward(&cache.hidden, cache.rows, dy, &mut grad.fc2);
        relu_backward_inplace(&mut dh, &cache.hidden);
        self.fc1.backward(&cache.input, cache.rows, &dh, &mut grad.fc1)
    }
}

impl<T: Scalar> ParamSet<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
