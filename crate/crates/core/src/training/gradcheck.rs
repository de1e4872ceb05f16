use super::grad::{loss_and_gradients, total_loss, BatchItem, LossTerms};
use super::loss::LossConfig;
use super::pairing::BatchPairing;
use crate::error::Result;
use crate::network::MoNetParams;
use crate::nn::ParamSet;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference check of the full batch loss over every parameter.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters with vanishing gradient from dominating on round-off.
pub fn finite_difference_check(
    batch: &[BatchItem<'_>],
    pairing: &BatchPairing,
    params: &MoNetParams<f64>,
    cfg: &LossConfig,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(batch, pairing, params, cfg, LossTerms::All)?;
    let analytic = grads.flatten();
    let mut names = Vec::with_capacity(analytic.len());
    params.visit("", &mut |name, t| {
        names.extend((0..t.len()).map(|k| format!("{name}[{k}]")));
    });

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = params.clone();
    for (flat, a) in analytic.iter().copied().enumerate() {
        let plus = eval_shifted(&mut probe, flat, step, batch, pairing, cfg)?;
        let minus = eval_shifted(&mut probe, flat, -step, batch, pairing, cfg)?;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_param = names[flat].clone();
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

fn eval_shifted(
    probe: &mut MoNetParams<f64>,
    flat: usize,
    delta: f64,
    batch: &[BatchItem<'_>],
    pairing: &BatchPairing,
    cfg: &LossConfig,
) -> Result<f64> {
    let original = set(probe, flat, |v| v + delta);
    let loss = total_loss(batch, pairing, probe, cfg);
    set(probe, flat, |_| original);
    loss.map(|l| l.total)
}

/// Rewrites one flat-indexed parameter and returns its previous value.
fn set(params: &mut MoNetParams<f64>, flat: usize, f: impl Fn(f64) -> f64) -> f64 {
    let mut offset = 0;
    let mut old = 0.0;
    params.visit_mut("", &mut |_, t| {
        let n = t.len();
        if (offset..offset + n).contains(&flat) {
            let v = &mut t.data_mut()[flat - offset];
            old = *v;
            *v = f(old);
        }
        offset += n;
    });
    old
}
