use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{argmax, fit_calibration, fit_svm, LinearSvm};
use crate::error::{shape_err, Error, Result};
use crate::network::{checkpoint_hash, load_checkpoint, policy_forward, MoNetParams};
use crate::scalar::{logistic_neg, Scalar};
use crate::simworld::{DemoSample, TaskTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// SVM regularization `C`.
    pub c: f64,
    /// Folds for the cross-validated calibration scores.
    pub folds: usize,
    pub fold_seed: u64,
    /// Fold straight-intersection into straight before fitting.
    pub merge_si: bool,
    /// Per-class sample budget (first samples in index order).
    #[serde(default)]
    pub per_class_cap: Option<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            folds: 3,
            fold_seed: 0,
            merge_si: true,
            per_class_cap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderMeta {
    pub checkpoint_hash: Option<String>,
    pub fold_seed: u64,
    pub folds: usize,
    pub samples_per_class: Vec<usize>,
}

/// Per-class linear scores plus sigmoid calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub classes: Vec<TaskTag>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// Calibration slopes `E_k`.
    pub calib_e: Vec<f64>,
    /// Calibration offsets `F_k`.
    pub calib_f: Vec<f64>,
    pub c: f64,
    pub merge_si: bool,
    pub meta: DecoderMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedDecision {
    /// Raw scores `f_k`.
    pub scores: Vec<f64>,
    /// Calibrated per-class probabilities `P_k`.
    pub probabilities: Vec<f64>,
    /// `P_k / Σ P`.
    pub normalized: Vec<f64>,
    /// Entropy of `normalized`, nats.
    pub entropy: f64,
}

impl DecodedDecision {
    pub fn argmax(&self) -> usize {
        argmax(&self.normalized)
    }
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Normalizes calibrated probabilities and computes their entropy.
pub fn decision_from_probabilities(scores: Vec<f64>, probabilities: Vec<f64>) -> DecodedDecision {
    let sum: f64 = probabilities.iter().sum();
    let normalized: Vec<f64> = probabilities.iter().map(|p| p / sum).collect();
    DecodedDecision {
        entropy: entropy(&normalized),
        scores,
        probabilities,
        normalized,
    }
}

impl DecoderModel {
    pub fn latent_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k == 0 {
            return Err(Error::InvalidInput("decoder has no classes".into()));
        }
        if [self.weights.len(), self.biases.len(), self.calib_e.len(), self.calib_f.len()]
            .iter()
            .any(|&n| n != k)
        {
            return Err(shape_err("decoder arrays disagree with the class list"));
        }
        let d = self.latent_dim();
        if self.weights.iter().any(|w| w.len() != d) {
            return Err(shape_err("decoder weight vectors differ in length"));
        }
        if self.calib_e.iter().chain(&self.calib_f).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite calibration parameter".into()));
        }
        Ok(())
    }

    pub fn class_index(&self, tag: TaskTag) -> Option<usize> {
        let tag = if self.merge_si { tag.merged() } else { tag };
        self.classes.iter().position(|&c| c == tag)
    }

    /// Decodes one latent decision.
    pub fn decode<T: Scalar>(&self, h_d: &[T]) -> Result<DecodedDecision> {
        if h_d.len() != self.latent_dim() {
            return Err(shape_err(format!(
                "latent decision has {} entries, decoder expects {}",
                h_d.len(),
                self.latent_dim()
            )));
        }
        let x: Vec<f64> = h_d.iter().map(|v| v.as_f64()).collect();
        let scores: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect();
        let probabilities = scores
            .iter()
            .zip(self.calib_e.iter().zip(&self.calib_f))
            .map(|(&f, (&e, &f0))| logistic_neg(e * f + f0))
            .collect();
        Ok(decision_from_probabilities(scores, probabilities))
    }

    pub fn classify<T: Scalar>(&self, h_d: &[T]) -> Result<TaskTag> {
        Ok(self.classes[self.decode(h_d)?.argmax()])
    }
}

pub fn decode_decision<T: Scalar>(h_d: &[T], model: &DecoderModel) -> Result<DecodedDecision> {
    model.decode(h_d)
}

/// Class list for a set of tags: merged classes in canonical order, or all
/// five tags.
pub fn decoder_classes(merge_si: bool) -> Vec<TaskTag> {
    if merge_si {
        TaskTag::MERGED.to_vec()
    } else {
        TaskTag::ALL.to_vec()
    }
}

/// Fits SVMs on all samples and calibration on `folds`-fold
/// cross-validated scores.
pub fn fit_decoder(features: &[Vec<f64>], tags: &[TaskTag], cfg: &DecoderConfig) -> Result<DecoderModel> {
    if features.len() != tags.len() {
        return Err(shape_err(format!("{} features for {} tags", features.len(), tags.len())));
    }
    if cfg.folds < 2 {
        return Err(Error::Config(format!("folds={} must be >= 2", cfg.folds)));
    }
    let classes = decoder_classes(cfg.merge_si);
    let labels: Vec<usize> = tags
        .iter()
        .map(|&t| {
            let t = if cfg.merge_si { t.merged() } else { t };
            classes.iter().position(|&c| c == t).expect("tag in class list")
        })
        .collect();
    let mut counts = vec![0usize; classes.len()];
    labels.iter().for_each(|&l| counts[l] += 1);
    let missing: Vec<String> = classes
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n < cfg.folds.max(2))
        .map(|(c, _)| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }
    let k = classes.len();

    // Stratified folds so every class appears in every training split.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fold_seed);
    let mut fold_of = vec![0usize; labels.len()];
    for class in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold_of[i] = r % cfg.folds;
        }
    }
    let fold_scores: Vec<(Vec<usize>, LinearSvm)> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
            let x: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let held: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            fit_svm(&x, &y, k, cfg.c).map(|svm| (held, svm))
        })
        .collect::<Result<_>>()?;
    let mut cv = vec![Vec::new(); labels.len()];
    for (held, svm) in &fold_scores {
        for &i in held {
            cv[i] = svm.scores(&features[i]);
        }
    }
    let svm = fit_svm(features, &labels, k, cfg.c)?;
    let mut calib_e = Vec::with_capacity(k);
    let mut calib_f = Vec::with_capacity(k);
    for class in 0..k {
        let s: Vec<f64> = cv.iter().map(|v| v[class]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let (e, f) = fit_calibration(&s, &pos)?;
        calib_e.push(e);
        calib_f.push(f);
    }
    Ok(DecoderModel {
        classes,
        weights: svm.weights,
        biases: svm.biases,
        calib_e,
        calib_f,
        c: cfg.c,
        merge_si: cfg.merge_si,
        meta: DecoderMeta {
            checkpoint_hash: None,
            fold_seed: cfg.fold_seed,
            folds: cfg.folds,
            samples_per_class: counts,
        },
    })
}

/// Indices of `indices` kept under a per-class budget, in order.
pub fn cap_per_class(samples: &[DemoSample], indices: &[usize], cap: Option<usize>, merge_si: bool) -> Vec<usize> {
    let Some(cap) = cap else {
        return indices.to_vec();
    };
    let mut seen = std::collections::BTreeMap::new();
    indices
        .iter()
        .copied()
        .filter(|&i| {
            let t = samples[i].task_tag();
            let t = if merge_si { t.merged() } else { t };
            let n = seen.entry(t).or_insert(0usize);
            *n += 1;
            *n <= cap
        })
        .collect()
}

/// Latent decisions of `params` over samples; `z^c` stands in for models
/// without a planning output.
pub fn collect_decisions(params: &MoNetParams<f32>, samples: &[DemoSample], indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    indices
        .par_iter()
        .map(|&i| {
            let out = policy_forward::<f32>(&samples[i].observation, params)?;
            let v = out.h_d.unwrap_or(out.z_c);
            Ok(v.into_iter().map(f64::from).collect())
        })
        .collect()
}

/// Fits a decoder on the latent decisions of a checkpointed model. The
/// checkpoint is only read.
pub fn build_decoder(
    checkpoint: &Path,
    samples: &[DemoSample],
    indices: &[usize],
    cfg: &DecoderConfig,
) -> Result<DecoderModel> {
    let (params, _) = load_checkpoint::<f32>(checkpoint)?;
    if !params.variant.has_latent_decision() {
        return Err(Error::InvalidInput(format!(
            "variant {} has no latent decision to decode",
            params.variant
        )));
    }
    let mut model = build_decoder_from_params(&params, samples, indices, cfg)?;
    model.meta.checkpoint_hash = Some(checkpoint_hash(checkpoint)?);
    Ok(model)
}

pub fn build_decoder_from_params(
    params: &MoNetParams<f32>,
    samples: &[DemoSample],
    indices: &[usize],
    cfg: &DecoderConfig,
) -> Result<DecoderModel> {
    let kept = cap_per_class(samples, indices, cfg.per_class_cap, cfg.merge_si);
    let features = collect_decisions(params, samples, &kept)?;
    let tags: Vec<TaskTag> = kept.iter().map(|&i| samples[i].task_tag()).collect();
    fit_decoder(&features, &tags, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_extremes() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    }
}
