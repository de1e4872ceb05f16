use rand::Rng;

use super::{join, mean_pool, LayerNorm, LayerNormCache, Mlp, MlpCache, MultiHeadAttention, MultiHeadCache, ParamSet};
use crate::kernels::add_into;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Single pre-norm Transformer encoder stack followed by token mean-pooling:
///
/// ```text
/// z' = MSA(LN(z)) + z
/// z  = MLP(LN(z')) + z'
/// out = mean over tokens of z
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerEncoder<T> {
    pub ln1: LayerNorm<T>,
    pub msa: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    /// Skips both layer norms; used by linearity tests.
    pub bypass_norm: bool,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    ln1: Option<LayerNormCache<T>>,
    msa: MultiHeadCache<T>,
    ln2: Option<LayerNormCache<T>>,
    mlp: MlpCache<T>,
    n: usize,
}

impl<T> EncoderCache<T> {
    pub fn attention_heads(&self) -> &MultiHeadCache<T> {
        &self.msa
    }
}

pub struct EncoderOutput<T> {
    /// Mean-pooled token vector.
    pub pooled: Vec<T>,
    /// Head-averaged attention matrix, `n × n`, row-stochastic.
    pub attention: Vec<T>,
}

impl<T: Scalar> TransformerEncoder<T> {
    pub fn new<R: Rng>(dim: usize, heads: usize, head_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            msa: MultiHeadAttention::new(dim, heads, head_dim, rng),
            ln2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, hidden, dim, rng),
            bypass_norm: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.ln1.dim()
    }

    pub fn forward(&self, z: &[T], n: usize) -> (EncoderOutput<T>, EncoderCache<T>) {
        let d = self.dim();
        let (n1, ln1) = if self.bypass_norm {
            (z.to_vec(), None)
        } else {
            let (y, c) = self.ln1.forward(z);
            (y, Some(c))
        };
        let (mut z1, attention, msa) = self.msa.forward(&n1, n);
        add_into(&mut z1, z);
        let (n2, ln2) = if self.bypass_norm {
            (z1.clone(), None)
        } else {
            let (y, c) = self.ln2.forward(&z1);
            (y, Some(c))
        };
        let (mut z2, mlp) = self.mlp.forward(&n2, n);
        add_into(&mut z2, &z1);
        let pooled = mean_pool(&z2, n, d);
        (
            EncoderOutput { pooled, attention },
            EncoderCache {
                ln1,
                msa,
                ln2,
                mlp,
                n,
            },
        )
    }

    /// Backward from the gradient of the pooled vector; returns `∂L/∂z`.
    pub fn backward(&self, cache: &EncoderCache<T>, d_pooled: &[T], grad: &mut Self) -> Vec<T> {
        let n = cache.n;
        let inv = T::one() / T::from_usize_lossy(n);
        let row: Vec<T> = d_pooled.iter().map(|&g| g * inv).collect();
        let mut dz2 = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            dz2.extend_from_slice(&row);
        }
        let dn2 = self.mlp.backward(&cache.mlp, &dz2, &mut grad.mlp);
        let mut dz1 = match &cache.ln2 {
            Some(c) => self.ln2.backward(c, &dn2, &mut grad.ln2),
            None => dn2,
        };
        add_into(&mut dz1, &dz2);
        let dn1 = self.msa.backward(&cache.msa, &dz1, &mut grad.msa);
        let mut dz = match &cache.ln1 {
            Some(c) => self.ln1.backward(c, &dn1, &mut grad.ln1),
            None => dn1,
        };
        add_into(&mut dz, &dz1);
        dz
    }
}

impl<T: Scalar> ParamSet<T> for TransformerEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.msa.visit(&join(prefix, "msa"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.msa.visit_mut(&join(prefix, "msa"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}
