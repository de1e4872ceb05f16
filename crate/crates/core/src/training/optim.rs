use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learning-rate decay law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    /// `lr(t) = lr₀ / (1 + factor · t / unit)`
    InverseTime { factor: f64, unit: f64 },
    Constant,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::InverseTime {
            factor: 3e-4,
            unit: 1000.0,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, lr0: f64, iteration: u64) -> f64 {
        match *self {
            Self::InverseTime { factor, unit } => lr0 / (1.0 + factor * iteration as f64 / unit),
            Self::Constant => lr0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::InverseTime { factor, unit } if !(factor >= 0.0 && unit > 0.0) => Err(Error::Config(format!(
                "inverse-time schedule needs factor >= 0 and unit > 0 (got {factor}, {unit})"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers follow the parameter
/// traversal order of [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: ParamSet<T>>(cfg: AdamConfig, params: &P) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(Tensor::zeros(t.shape())));
        Self {
            cfg,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update `θ ← θ − lr · m̂ / (√v̂ + ε)`.
    pub fn update<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let mut gs = Vec::new();
        grads.visit("", &mut |_, t| gs.push(t.data().to_vec()));
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let bc1 = T::lit(1.0 - self.cfg.beta1.powf(self.step as f64));
        let bc2 = T::lit(1.0 - self.cfg.beta2.powf(self.step as f64));
        let (lr, eps) = (T::lit(lr), T::lit(self.cfg.eps));
        let one = T::one();
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let g = &gs[idx];
            let m = ms[idx].data_mut();
            let v = vs[idx].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}
