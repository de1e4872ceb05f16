use serde::{Deserialize, Serialize};

use super::types::TaskTag;
use super::world::{Pose, WorldMap};

/// Arc-length parametrised polyline through a route's waypoints.
#[derive(Clone, Debug)]
pub struct RoutePath {
    pub nodes: Vec<usize>,
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl RoutePath {
    pub fn new(world: &WorldMap, nodes: &[usize]) -> Self {
        let points: Vec<[f64; 2]> = nodes.iter().map(|&n| world.nodes[n]).collect();
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Self {
            nodes: nodes.to_vec(),
            points,
            cumulative,
        }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Arc length at waypoint `k` of the route.
    pub fn node_arc(&self, k: usize) -> f64 {
        self.cumulative[k]
    }

    fn segment_dir(&self, i: usize) -> [f64; 2] {
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = (self.cumulative[i + 1] - self.cumulative[i]).max(1e-12);
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len().saturating_sub(2);
        (0..=n).find(|&i| s <= self.cumulative[i + 1]).unwrap_or(n)
    }

    /// Point at arc length `s`, clamped to the path, extended past the end
    /// along the final segment.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let s = s.max(0.0);
        let i = self.segment_at(s);
        let d = self.segment_dir(i);
        let t = s - self.cumulative[i];
        [self.points[i][0] + d[0] * t, self.points[i][1] + d[1] * t]
    }

    pub fn direction_at(&self, s: f64) -> [f64; 2] {
        if self.points.len() == 1 {
            return [1.0, 0.0];
        }
        self.segment_dir(self.segment_at(s.max(0.0)))
    }

    /// Projection of `p` onto the path restricted to arc lengths within
    /// `[lo, hi]`: returns `(s, signed lateral offset)` with positive
    /// offsets on the right-hand side of the travel direction.
    pub fn project_window(&self, p: [f64; 2], lo: f64, hi: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..self.points.len().saturating_sub(1) {
            let (s0, s1) = (self.cumulative[i], self.cumulative[i + 1]);
            if s1 < lo || s0 > hi {
                continue;
            }
            let d = self.segment_dir(i);
            let a = self.points[i];
            let t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]).clamp(lo.max(s0) - s0, hi.min(s1) - s0);
            let q = [a[0] + d[0] * t, a[1] + d[1] * t];
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if dist < best.0 {
                // Right-hand normal of travel direction (x east, y south).
                let lateral = (p[0] - q[0]) * -d[1] + (p[1] - q[1]) * d[0];
                best = (dist, s0 + t, lateral);
            }
        }
        (best.1, best.2)
    }

    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        self.project_window(p, 0.0, self.length())
    }

    /// Turn direction at interior waypoint `k`: `Some(RT)` for a right
    /// turn, `Some(LT)` for a left turn, `None` when going straight.
    pub fn turn_at(&self, k: usize) -> Option<TaskTag> {
        if k == 0 || k + 1 >= self.points.len() {
            return None;
        }
        let (din, dout) = (self.segment_dir(k - 1), self.segment_dir(k));
        let cross = din[0] * dout[1] - din[1] * dout[0];
        if cross > 0.5 {
            Some(TaskTag::RT)
        } else if cross < -0.5 {
            Some(TaskTag::LT)
        } else {
            None
        }
    }
}

/// Radii for the task-tag rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRules {
    /// Distance to a junction or turn waypoint, meters.
    pub intersection_radius_m: f64,
    /// Look-ahead along the route for obstacles, meters.
    pub obstacle_ahead_m: f64,
    /// Distance past an obstacle that still counts as avoiding it, meters.
    pub obstacle_behind_m: f64,
}

impl Default for TagRules {
    fn default() -> Self {
        Self {
            intersection_radius_m: 2.5,
            obstacle_ahead_m: 4.0,
            obstacle_behind_m: 0.5,
        }
    }
}

/// Obstacles projected onto a route as arc-length positions.
pub fn obstacle_arcs(world: &WorldMap, route: &RoutePath) -> Vec<f64> {
    world
        .obstacles
        .iter()
        .filter_map(|ob| {
            let (s, lateral) = route.project(ob.center());
            (lateral.abs() <= world.corridor_width_m / 2.0).then_some(s)
        })
        .collect()
}

/// Task tag at arc length `s` for a vehicle at `pose`.
///
/// Turns (at junctions or corners) win over obstacle avoidance, which wins
/// over driving straight through a junction.
pub fn task_tag(world: &WorldMap, route: &RoutePath, obstacles: &[f64], pose: &Pose, s: f64, rules: &TagRules) -> TaskTag {
    let mut junction = false;
    for k in 1..route.nodes.len().saturating_sub(1) {
        let p = route.points()[k];
        let d = ((pose.x - p[0]).powi(2) + (pose.y - p[1]).powi(2)).sqrt();
        if d > rules.intersection_radius_m {
            continue;
        }
        if let Some(turn) = route.turn_at(k) {
            return turn;
        }
        if world.degree(route.nodes[k]) >= 3 {
            junction = true;
        }
    }
    if obstacles
        .iter()
        .any(|&so| so - s <= rules.obstacle_ahead_m && s - so <= rules.obstacle_behind_m)
    {
        return TaskTag::CA;
    }
    if junction {
        TaskTag::SI
    } else {
        TaskTag::ST
    }
}
