use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rsm::{compute_rsm_with_classes, Rsm};
use crate::error::Result;
use crate::interpret::{cap_per_class, collect_decisions, decoder_classes};
use crate::network::{load_checkpoint, MoNetParams};
use crate::simworld::{DemoSample, TaskTag};
use crate::training::{list_checkpoints, mean_imitation_loss};

/// Fixed tagged evaluation set for RSMs and learning curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionSetConfig {
    /// Per-class cap on sampled decisions.
    pub per_class_cap: Option<usize>,
    pub merge_si: bool,
    pub lambda_tau: f64,
}

impl Default for DecisionSetConfig {
    fn default() -> Self {
        Self {
            per_class_cap: Some(300),
            merge_si: true,
            lambda_tau: 0.5,
        }
    }
}

/// Latent decisions (or `z^c` for models without one) tagged with their
/// class, under the per-class cap.
pub fn sample_decisions(
    params: &MoNetParams<f32>,
    samples: &[DemoSample],
    indices: &[usize],
    cfg: &DecisionSetConfig,
) -> Result<Vec<(Vec<f64>, TaskTag)>> {
    let kept = cap_per_class(samples, indices, cfg.per_class_cap, cfg.merge_si);
    let vectors = collect_decisions(params, samples, &kept)?;
    Ok(vectors
        .into_iter()
        .zip(&kept)
        .map(|(v, &i)| {
            let t = samples[i].task_tag();
            (v, if cfg.merge_si { t.merged() } else { t })
        })
        .collect())
}

pub fn decision_rsm(
    params: &MoNetParams<f32>,
    samples: &[DemoSample],
    indices: &[usize],
    cfg: &DecisionSetConfig,
) -> Result<Rsm> {
    let d = sample_decisions(params, samples, indices, cfg)?;
    compute_rsm_with_classes(&d, &decoder_classes(cfg.merge_si))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: u64,
    pub validation_l1: f64,
    pub similarity_score: f64,
}

/// Validation L1 and similarity score for every checkpoint of a run.
pub fn learning_curve(
    run_dir: &Path,
    samples: &[DemoSample],
    indices: &[usize],
    cfg: &DecisionSetConfig,
) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::new();
    for dir in list_checkpoints(run_dir)? {
        let (params, manifest) = load_checkpoint::<f32>(&dir)?;
        rows.push(CurveRow {
            iteration: manifest.iteration,
            validation_l1: mean_imitation_loss(&params, samples, indices, cfg.lambda_tau)?,
            similarity_score: decision_rsm(&params, samples, indices, cfg)?.similarity_score,
        });
    }
    Ok(rows)
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("iteration,validation_l1,similarity_score\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.validation_l1, r.similarity_score);
    }
    s
}
