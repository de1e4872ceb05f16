use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::interpret::{DecodedDecision, DecoderModel};
use crate::network::{policy_forward, MoNetParams};
use crate::simworld::{run_episode, start_pose, Action, Outcome, Pose, SimConfig, TaskTag, WorldMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub step: usize,
    pub pose: Pose,
    pub action: Action,
    pub expert: Action,
    pub tag: TaskTag,
    pub h_d: Option<Vec<f32>>,
    pub decoded: Option<DecodedDecision>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCount {
    pub successes: usize,
    pub attempts: usize,
}

impl TaskCount {
    pub fn rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.successes as f64 / self.attempts as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub episode_id: u64,
    pub world_seed: u64,
    pub steps: Vec<RolloutStep>,
    pub outcome: Outcome,
    pub tasks: BTreeMap<TaskTag, TaskCount>,
}

/// Task instances are maximal runs of one tag. Every instance that ended
/// before the episode did counts as a success; the final instance succeeds
/// only if the goal was reached.
pub fn task_counts(tags: &[TaskTag], outcome: Outcome) -> BTreeMap<TaskTag, TaskCount> {
    let mut out: BTreeMap<TaskTag, TaskCount> = BTreeMap::new();
    let mut k = 0;
    while k < tags.len() {
        let mut end = k;
        while end + 1 < tags.len() && tags[end + 1] == tags[k] {
            end += 1;
        }
        let c = out.entry(tags[k]).or_default();
        c.attempts += 1;
        if end + 1 < tags.len() || outcome == Outcome::Goal {
            c.successes += 1;
        }
        k = end + 1;
    }
    out
}

/// Drives the policy from the route start. Actions are clamped to the
/// valid range; `max_steps` caps the episode below the simulator's budget.
pub fn rollout(
    world: &WorldMap,
    route: &[usize],
    params: &MoNetParams<f32>,
    decoder: Option<&DecoderModel>,
    cfg: &SimConfig,
    max_steps: Option<usize>,
    episode_id: u64,
) -> Result<RolloutResult> {
    let mut latents: Vec<(Option<Vec<f32>>, Option<DecodedDecision>)> = Vec::new();
    let mut driver = |ctx: &crate::simworld::StepContext<'_>| -> Result<Action> {
        if max_steps.is_some_and(|m| ctx.step >= m) {
            return Ok(Action::default());
        }
        let out = policy_forward::<f32>(ctx.observation()?, params)?;
        let decoded = match (decoder, &out.h_d) {
            (Some(d), Some(h)) => Some(d.decode(h)?),
            _ => None,
        };
        latents.push((out.h_d, decoded));
        Ok(Action::new(out.action[0], out.action[1]).clamped())
    };
    let ep = run_episode(world, route, start_pose(world, route), cfg, false, &mut driver)?;
    let mut outcome = ep.outcome;
    let mut steps: Vec<RolloutStep> = Vec::with_capacity(latents.len());
    for (rec, (h_d, decoded)) in ep.steps.into_iter().zip(latents) {
        steps.push(RolloutStep {
            step: rec.step,
            pose: rec.pose,
            action: rec.action,
            expert: rec.expert,
            tag: rec.tag,
            h_d,
            decoded,
        });
    }
    if max_steps.is_some_and(|m| steps.len() >= m) && outcome != Outcome::Goal {
        steps.truncate(max_steps.unwrap_or(0));
        outcome = Outcome::Timeout;
    }
    let tags: Vec<TaskTag> = steps.iter().map(|s| s.tag).collect();
    Ok(RolloutResult {
        episode_id,
        world_seed: world.seed,
        tasks: task_counts(&tags, outcome),
        steps,
        outcome,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub episodes: usize,
    pub goals: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub tasks: BTreeMap<TaskTag, TaskCount>,
}

impl SuccessTable {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.goals as f64 / self.episodes as f64
        }
    }
}

pub fn success_table(results: &[RolloutResult]) -> SuccessTable {
    let mut t = SuccessTable {
        episodes: results.len(),
        ..Default::default()
    };
    for r in results {
        match r.outcome {
            Outcome::Goal => t.goals += 1,
            Outcome::Collision => t.collisions += 1,
            Outcome::Timeout => t.timeouts += 1,
        }
        for (tag, c) in &r.tasks {
            let e = t.tasks.entry(*tag).or_default();
            e.successes += c.successes;
            e.attempts += c.attempts;
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub window: usize,
    pub transitions: usize,
    pub transition_steps: usize,
    pub steady_steps: usize,
    /// Mean entropy within `window` steps of a task change; `None` when
    /// there are no changes.
    pub transition_mean: Option<f64>,
    pub steady_mean: Option<f64>,
    /// `transition_mean − steady_mean` when both exist.
    pub difference: Option<f64>,
}

/// Splits per-step entropies into transition windows (within `window`
/// steps of a tag change) and steady steps.
pub fn entropy_windows(tags: &[TaskTag], entropies: &[f64], window: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let changes: Vec<usize> = (1..tags.len()).filter(|&t| tags[t] != tags[t - 1]).collect();
    let mut near = vec![false; tags.len()];
    for &c in &changes {
        let lo = c.saturating_sub(window);
        let hi = (c + window).min(tags.len().saturating_sub(1));
        near[lo..=hi].iter_mut().for_each(|n| *n = true);
    }
    let (mut tr, mut st) = (Vec::new(), Vec::new());
    for (k, &h) in entropies.iter().enumerate().take(tags.len()) {
        if near[k] {
            tr.push(h);
        } else {
            st.push(h);
        }
    }
    (tr, st, changes.len())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Entropy in transition versus steady windows, pooled over episodes.
/// Tags are compared after folding straight-intersection into straight,
/// matching the decoder's classes. Steps without a decoded decision are
/// skipped.
pub fn entropy_transition_report(results: &[RolloutResult], window: usize) -> EntropyReport {
    let (mut tr, mut st, mut n) = (Vec::new(), Vec::new(), 0);
    for r in results {
        let steps: Vec<&RolloutStep> = r.steps.iter().filter(|s| s.decoded.is_some()).collect();
        let tags: Vec<TaskTag> = steps.iter().map(|s| s.tag.merged()).collect();
        let h: Vec<f64> = steps.iter().map(|s| s.decoded.as_ref().map_or(0.0, |d| d.entropy)).collect();
        let (a, b, c) = entropy_windows(&tags, &h, window);
        tr.extend(a);
        st.extend(b);
        n += c;
    }
    let (tm, sm) = (mean(&tr), mean(&st));
    EntropyReport {
        window,
        transitions: n,
        transition_steps: tr.len(),
        steady_steps: st.len(),
        transition_mean: tm,
        steady_mean: sm,
        difference: tm.zip(sm).map(|(a, b)| a - b),
    }
}
