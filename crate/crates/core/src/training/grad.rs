use rayon::prelude::*;

use super::loss::{imitation_grad, imitation_loss, lgc_with_grad, LossConfig, PairBranch};
use super::pairing::BatchPairing;
use crate::error::{Error, Result};
use crate::kernels::add_into;
use crate::network::{MoNetParams, PolicySeed};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::simworld::{Action, Observation};

/// A mini-batch as seen by the losses: observations and target actions
/// only. Task tags are deliberately absent.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub observation: &'a Observation,
    pub action: Action,
}

/// Which loss terms to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerms {
    All,
    ImitationOnly,
    LgcOnly,
}

impl LossTerms {
    fn imitation(self) -> bool {
        matches!(self, Self::All | Self::ImitationOnly)
    }

    fn lgc(self) -> bool {
        matches!(self, Self::All | Self::LgcOnly)
    }
}

/// Batch-mean loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// `mean_i [L_π + λ_LGC·L_LGC]`
    pub total: f64,
    pub imitation: f64,
    /// Unweighted mean contrastive term.
    pub lgc: f64,
    pub positive_pairs: usize,
}

fn target<T: Scalar>(a: Action) -> [T; 2] {
    [T::from_f32v(a.steering), T::from_f32v(a.throttle)]
}

fn check_batch(batch: &[BatchItem<'_>], pairing: &BatchPairing) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::InvalidInput("batch size must be at least 2".into()));
    }
    if pairing.len() != batch.len() {
        return Err(Error::InvalidInput(format!(
            "pairing covers {} samples, batch has {}",
            pairing.len(),
            batch.len()
        )));
    }
    Ok(())
}

/// Whether the contrastive term is active for this model and config.
pub fn lgc_active<T: Scalar>(params: &MoNetParams<T>, cfg: &LossConfig) -> bool {
    params.variant.uses_lgc() && cfg.lambda_lgc > 0.0
}

/// Loss value only (no caches kept).
pub fn total_loss<T: Scalar>(
    batch: &[BatchItem<'_>],
    pairing: &BatchPairing,
    params: &MoNetParams<T>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_batch(batch, pairing)?;
    let outs = batch
        .par_iter()
        .map(|b| crate::network::policy_forward::<T>(b.observation, params))
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len();
    let lt = T::lit(cfg.lambda_tau);
    let kappa = T::lit(cfg.kappa);
    let mut imit = T::zero();
    let mut lgc = T::zero();
    let mut positive = 0;
    for (i, (o, b)) in outs.iter().zip(batch).enumerate() {
        imit = imit + imitation_loss(o.action, target(b.action), lt);
        if lgc_active(params, cfg) {
            let j = pairing.partner(i);
            let (hi, hj) = (o.h_d.as_deref().unwrap(), outs[j].h_d.as_deref().unwrap());
            let (v, branch, _, _) = lgc_with_grad(&o.z_p, &outs[j].z_p, hi, hj, kappa);
            lgc = lgc + v;
            positive += usize::from(branch == PairBranch::Positive);
        }
    }
    let inv = T::one() / T::from_usize_lossy(n);
    let imitation = (imit * inv).as_f64();
    let lgc = (lgc * inv).as_f64();
    Ok(LossBreakdown {
        total: imitation + cfg.lambda_lgc * lgc,
        imitation,
        lgc,
        positive_pairs: positive,
    })
}

/// Loss values and `∂L/∂θ` for the requested terms.
///
/// The imitation term seeds the action and so reaches every module; the
/// contrastive term seeds only `h^d` and never touches control parameters.
/// The similarity gate is evaluated on detached values.
pub fn loss_and_gradients<T: Scalar>(
    batch: &[BatchItem<'_>],
    pairing: &BatchPairing,
    params: &MoNetParams<T>,
    cfg: &LossConfig,
    terms: LossTerms,
) -> Result<(LossBreakdown, MoNetParams<T>)> {
    check_batch(batch, pairing)?;
    let forwards = batch
        .par_iter()
        .map(|b| params.forward_cached(b.observation))
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len();
    let inv = T::one() / T::from_usize_lossy(n);
    let lt = T::lit(cfg.lambda_tau);
    let kappa = T::lit(cfg.kappa);
    let use_lgc = lgc_active(params, cfg);

    let mut seeds: Vec<PolicySeed<T>> = vec![PolicySeed::default(); n];
    let mut imit = T::zero();
    for (i, ((out, _), b)) in forwards.iter().zip(batch).enumerate() {
        let t = target(b.action);
        imit = imit + imitation_loss(out.action, t, lt);
        if terms.imitation() {
            let g = imitation_grad(out.action, t, lt);
            seeds[i].action = Some([g[0] * inv, g[1] * inv]);
        }
    }

    let mut lgc = T::zero();
    let mut positive = 0;
    if use_lgc {
        let w = T::lit(cfg.lambda_lgc) * inv;
        let latent = params.config.latent_dim;
        for i in 0..n {
            let j = pairing.partner(i);
            let (oi, oj) = (&forwards[i].0, &forwards[j].0);
            let hi = oi.h_d.as_deref().expect("latent decision present");
            let hj = oj.h_d.as_deref().expect("latent decision present");
            let (v, branch, gi, gj) = lgc_with_grad(&oi.z_p, &oj.z_p, hi, hj, kappa);
            lgc = lgc + v;
            positive += usize::from(branch == PairBranch::Positive);
            if terms.lgc() {
                for (k, g) in [(i, gi), (j, gj)] {
                    let scaled: Vec<T> = g.into_iter().map(|x| x * w).collect();
                    match seeds[k].h_d.as_mut() {
                        Some(acc) => add_into(acc, &scaled),
                        None => {
                            debug_assert_eq!(scaled.len(), latent);
                            seeds[k].h_d = Some(scaled)
                        }
                    }
                }
            }
        }
    }

    let per_sample: Vec<MoNetParams<T>> = forwards
        .par_iter()
        .zip(seeds.par_iter())
        .map(|((_, cache), seed)| {
            let mut g = params.zeroed();
            params.backward(cache, seed, &mut g);
            g
        })
        .collect();
    let mut grads = params.zeroed();
    for g in &per_sample {
        grads.accumulate(g);
    }

    let imitation = (imit * inv).as_f64();
    let lgc_mean = (lgc * inv).as_f64();
    Ok((
        LossBreakdown {
            total: imitation + if use_lgc { cfg.lambda_lgc * lgc_mean } else { 0.0 },
            imitation,
            lgc: lgc_mean,
            positive_pairs: positive,
        },
        grads,
    ))
}

/// Gradient of the combined loss with module routing applied.
pub fn backward_with_routing<T: Scalar>(
    batch: &[BatchItem<'_>],
    pairing: &BatchPairing,
    params: &MoNetParams<T>,
    cfg: &LossConfig,
) -> Result<MoNetParams<T>> {
    loss_and_gradients(batch, pairing, params, cfg, LossTerms::All).map(|(_, g)| g)
}
