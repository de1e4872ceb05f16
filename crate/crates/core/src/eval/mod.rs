//! Task-specificity metrics, learning curves and closed-loop evaluation.

mod curve;
mod rollout;
mod rsm;

pub use curve::{curve_csv, decision_rsm, learning_curve, sample_decisions, CurveRow, DecisionSetConfig};
pub use rollout::{
    entropy_transition_report, entropy_windows, rollout, success_table, task_counts, EntropyReport, RolloutResult,
    RolloutStep, SuccessTable, TaskCount,
};
pub use rsm::{compute_rsm, compute_rsm_with_classes, Rsm};
