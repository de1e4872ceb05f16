use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Throttle weight `λ_τ ∈ [0, 1]`.
    pub lambda_tau: f64,
    /// Perceptual-similarity gate `κ ∈ [-1, 1]`.
    pub kappa: f64,
    /// Contrastive weight `λ_LGC ≥ 0`.
    pub lambda_lgc: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_tau: 0.5,
            kappa: 0.5,
            lambda_lgc: 5e-4,
        }
    }
}

impl LossConfig {
    /// Contrastive settings for desk-scale runs. The small perception
    /// module yields highly similar `z^p` across samples, so the gate sits
    /// higher and the contrastive term is weighted up to compete with the
    /// imitation loss within a few thousand iterations.
    pub fn desk() -> Self {
        Self {
            lambda_tau: 0.5,
            kappa: 0.9,
            lambda_lgc: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_tau) {
            return Err(Error::Config(format!("lambda_tau={} outside [0, 1]", self.lambda_tau)));
        }
        if !(-1.0..=1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa={} outside [-1, 1]", self.kappa)));
        }
        if !(self.lambda_lgc >= 0.0) || !self.lambda_lgc.is_finite() {
            return Err(Error::Config(format!("lambda_lgc={} must be finite and >= 0", self.lambda_lgc)));
        }
        Ok(())
    }
}

/// `|δ^c − δ| + λ_τ·|τ^c − τ|`
pub fn imitation_loss<T: Scalar>(predicted: [T; 2], target: [T; 2], lambda_tau: T) -> T {
    (predicted[0] - target[0]).abs() + lambda_tau * (predicted[1] - target[1]).abs()
}

/// Subgradient of [`imitation_loss`] with respect to the prediction
/// (`sign(0) = 0`).
pub fn imitation_grad<T: Scalar>(predicted: [T; 2], target: [T; 2], lambda_tau: T) -> [T; 2] {
    let sign = |x: T| {
        if x > T::zero() {
            T::one()
        } else if x < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    [sign(predicted[0] - target[0]), lambda_tau * sign(predicted[1] - target[1])]
}

static DEGENERATE_COSINE: AtomicU64 = AtomicU64::new(0);

/// Number of cosine evaluations that hit a zero vector since process start.
pub fn degenerate_cosine_count() -> u64 {
    DEGENERATE_COSINE.load(Ordering::Relaxed)
}

/// Cosine similarity; a zero-norm argument yields 0 and bumps
/// [`degenerate_cosine_count`].
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        DEGENERATE_COSINE.fetch_add(1, Ordering::Relaxed);
        return T::zero();
    }
    let c = dot(a, b) / (na * nb);
    c.max(-T::one()).min(T::one())
}

/// `(cos, ∂cos/∂a, ∂cos/∂b)`; gradients vanish on degenerate inputs.
pub fn cosine_with_grad<T: Scalar>(a: &[T], b: &[T]) -> (T, Vec<T>, Vec<T>) {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        DEGENERATE_COSINE.fetch_add(1, Ordering::Relaxed);
        return (T::zero(), vec![T::zero(); a.len()], vec![T::zero(); b.len()]);
    }
    let c = dot(a, b) / (na * nb);
    let inv = T::one() / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y * inv - c * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x * inv - c * y / (nb * nb))
        .collect();
    (c, da, db)
}

/// Which branch of the contrastive loss a pair took.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairBranch {
    Positive,
    Negative,
}

/// Gate on perceptual similarity, evaluated on plain values.
pub fn lgc_branch<T: Scalar>(z_i: &[T], z_j: &[T], kappa: T) -> PairBranch {
    if cosine_similarity(z_i, z_j) >= kappa {
        PairBranch::Positive
    } else {
        PairBranch::Negative
    }
}

/// Latent-guided contrastive loss for one pair:
/// `1 − cos(h_i, h_j)` when `cos(z_i, z_j) ≥ κ`, else `max(0, cos(h_i, h_j))`.
pub fn lgc_loss<T: Scalar>(z_i: &[T], z_j: &[T], h_i: &[T], h_j: &[T], kappa: T) -> T {
    let c = cosine_similarity(h_i, h_j);
    match lgc_branch(z_i, z_j, kappa) {
        PairBranch::Positive => T::one() - c,
        PairBranch::Negative => c.max(T::zero()),
    }
}

/// Contrastive loss value with gradients for both latent decisions. The gate
/// contributes no gradient.
pub fn lgc_with_grad<T: Scalar>(
    z_i: &[T],
    z_j: &[T],
    h_i: &[T],
    h_j: &[T],
    kappa: T,
) -> (T, PairBranch, Vec<T>, Vec<T>) {
    let branch = lgc_branch(z_i, z_j, kappa);
    let (c, dci, dcj) = cosine_with_grad(h_i, h_j);
    let (value, outer) = match branch {
        PairBranch::Positive => (T::one() - c, -T::one()),
        PairBranch::Negative if c > T::zero() => (c, T::one()),
        PairBranch::Negative => (T::zero(), T::zero()),
    };
    let scale = |v: Vec<T>| v.into_iter().map(|g| g * outer).collect();
    (value, branch, scale(dci), scale(dcj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imitation_examples() {
        assert_eq!(imitation_loss([0.3f64, 0.4], [0.3, 0.4], 0.5), 0.0);
        let l = imitation_loss([0.2f64, 0.5], [0.1, 0.3], 0.5);
        assert!((l - 0.2).abs() < 1e-12);
        let a = imitation_loss([0.2f64, 0.9], [0.1, -0.9], 0.0);
        let b = imitation_loss([0.2f64, -0.4], [0.1, 0.7], 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3f64, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &v) - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&v, &neg) + 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn zero_vector_cosine_is_zero_and_counted() {
        let before = degenerate_cosine_count();
        assert_eq!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 2.0]), 0.0);
        assert!(degenerate_cosine_count() > before);
    }

    /// Vectors with a prescribed cosine: `(1, 0)` and `(c, √(1−c²))`.
    fn pair(c: f64) -> ([f64; 2], [f64; 2]) {
        ([1.0, 0.0], [c, (1.0 - c * c).sqrt()])
    }

    #[test]
    fn lgc_examples() {
        let (zi, zj) = pair(0.9);
        let (hi, hj) = pair(1.0);
        assert!(lgc_loss(&zi, &zj, &hi, &hj, 0.5).abs() < 1e-12);
        let (hi, hj) = pair(0.5);
        assert!((lgc_loss(&zi, &zj, &hi, &hj, 0.5) - 0.5).abs() < 1e-12);
        let (zi, zj) = pair(0.1);
        let (hi, hj) = pair(-0.3);
        assert_eq!(lgc_loss(&zi, &zj, &hi, &hj, 0.5), 0.0);
        let (hi, hj) = pair(0.8);
        assert!((lgc_loss(&zi, &zj, &hi, &hj, 0.5) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cosine_gradient_matches_central_differences() {
        let a = [0.4f64, -1.1, 0.7];
        let b = [1.5f64, 0.2, -0.3];
        let (_, da, db) = cosine_with_grad(&a, &b);
        let h = 1e-6;
        for k in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[k] += h;
            am[k] -= h;
            let fd = (cosine_similarity(&ap, &b) - cosine_similarity(&am, &b)) / (2.0 * h);
            assert!((fd - da[k]).abs() < 1e-8);
            let mut bp = b;
            let mut bm = b;
            bp[k] += h;
            bm[k] -= h;
            let fd = (cosine_similarity(&a, &bp) - cosine_similarity(&a, &bm)) / (2.0 * h);
            assert!((fd - db[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn config_ranges_are_enforced() {
        LossConfig::default().validate().unwrap();
        assert!(LossConfig { lambda_tau: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossConfig { kappa: -2.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { lambda_lgc: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!(LossConfig::default().lambda_lgc, 5e-4);
        assert_eq!(LossConfig::default().kappa, 0.5);
    }
}
