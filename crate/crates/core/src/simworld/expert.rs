use serde::{Deserialize, Serialize};

use super::dynamics::VehicleConfig;
use super::route::RoutePath;
use super::types::Action;
use super::world::{Pose, WorldMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub lookahead_m: f64,
    /// Throttle on a straight path.
    pub cruise: f64,
    /// Throttle reduction per unit of |steering|.
    pub slowdown: f64,
    /// Arc-length distance over which the avoidance offset ramps in and out.
    pub avoid_ramp_m: f64,
    /// Extra arc length held at full offset on both sides of an obstacle.
    pub avoid_hold_m: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            lookahead_m: 1.6,
            cruise: 0.6,
            slowdown: 0.5,
            avoid_ramp_m: 2.0,
            avoid_hold_m: 0.6,
        }
    }
}

/// Obstacle as seen from a route: arc-length extent and the lateral
/// offset that centres the vehicle in the remaining gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvoidanceZone {
    pub s_min: f64,
    pub s_max: f64,
    pub target_offset: f64,
}

pub fn avoidance_zones(world: &WorldMap, route: &RoutePath) -> Vec<AvoidanceZone> {
    let half = world.corridor_width_m / 2.0;
    world
        .obstacles
        .iter()
        .filter_map(|ob| {
            let corners = [
                [ob.min[0], ob.min[1]],
                [ob.max[0], ob.min[1]],
                [ob.min[0], ob.max[1]],
                [ob.max[0], ob.max[1]],
            ];
            let (s_c, lat_c) = route.project(ob.center());
            if lat_c.abs() > half {
                return None;
            }
            let proj: Vec<(f64, f64)> = corners
                .iter()
                .map(|&c| route.project_window(c, s_c - 2.0, s_c + 2.0))
                .collect();
            let s_min = proj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let s_max = proj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let target_offset = if lat_c > 0.0 {
                let inner = proj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                (-half + inner) / 2.0
            } else {
                let inner = proj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                (half + inner) / 2.0
            };
            Some(AvoidanceZone {
                s_min,
                s_max,
                target_offset,
            })
        })
        .collect()
}

/// Lateral offset of the reference path at arc length `s`.
pub fn reference_offset(zones: &[AvoidanceZone], s: f64, cfg: &ExpertConfig) -> f64 {
    let mut offset: f64 = 0.0;
    for z in zones {
        let (lo, hi) = (z.s_min - cfg.avoid_hold_m, z.s_max + cfg.avoid_hold_m);
        let gap = if s < lo {
            lo - s
        } else if s > hi {
            s - hi
        } else {
            0.0
        };
        if gap >= cfg.avoid_ramp_m {
            continue;
        }
        let w = 0.5 * (1.0 + (std::f64::consts::PI * gap / cfg.avoid_ramp_m).cos());
        let o = z.target_offset * w;
        if o.abs() > offset.abs() {
            offset = o;
        }
    }
    offset
}

/// Pure-pursuit steering toward `target` from `pose`; left is negative.
pub fn pursuit_steering(pose: &Pose, target: [f64; 2], vehicle: &VehicleConfig, speed: f64) -> f64 {
    let (dx, dy) = (target[0] - pose.x, target[1] - pose.y);
    let dist = (dx * dx + dy * dy).sqrt().max(1e-6);
    let bearing = dy.atan2(dx) - pose.heading;
    let alpha = bearing.sin().atan2(bearing.cos());
    let curvature = 2.0 * alpha.sin() / dist;
    (curvature * speed / vehicle.omega_max).clamp(-1.0, 1.0)
}

/// Scripted demonstrator: pure pursuit on the route, shifted laterally
/// around obstacles, slowing down in proportion to steering.
#[derive(Clone, Debug)]
pub struct Expert {
    pub route: RoutePath,
    zones: Vec<AvoidanceZone>,
    cfg: ExpertConfig,
    vehicle: VehicleConfig,
    progress: f64,
}

impl Expert {
    pub fn new(world: &WorldMap, route: RoutePath, cfg: ExpertConfig, vehicle: VehicleConfig) -> Self {
        let zones = avoidance_zones(world, &route);
        Self {
            route,
            zones,
            cfg,
            vehicle,
            progress: 0.0,
        }
    }

    /// Arc-length progress of the last queried pose.
    pub fn progress(&self) -> f64 {
        self.progress
    }

    /// Updates progress from `pose`, searching near the previous value so
    /// the projection does not jump between route legs.
    pub fn track(&mut self, pose: &Pose) -> f64 {
        let (s, _) = self
            .route
            .project_window([pose.x, pose.y], self.progress - 1.0, self.progress + 3.0);
        self.progress = s.max(self.progress - 1.0);
        self.progress
    }

    pub fn action(&mut self, pose: &Pose) -> Action {
        let s = self.track(pose);
        self.action_at(pose, s)
    }

    /// Expert action for `pose` given its route progress `s`.
    pub fn action_at(&self, pose: &Pose, s: f64) -> Action {
        let st = s + self.cfg.lookahead_m;
        let base = self.route.point_at(st);
        let dir = self.route.direction_at(st);
        let off = reference_offset(&self.zones, st, &self.cfg);
        let target = [base[0] - dir[1] * off, base[1] + dir[0] * off];
        let speed = self.cfg.cruise * self.vehicle.v_max;
        let steering = pursuit_steering(pose, target, &self.vehicle, speed);
        let throttle = self.cfg.cruise * (1.0 - self.cfg.slowdown * steering.abs());
        Action::new(steering as f32, throttle as f32).clamped()
    }
}

/// Stateless expert query: projects `pose` onto the whole route.
pub fn expert_action(
    world: &WorldMap,
    pose: &Pose,
    route: &[usize],
    cfg: &ExpertConfig,
    vehicle: &VehicleConfig,
) -> Action {
    let path = RoutePath::new(world, route);
    let (s, _) = path.project([pose.x, pose.y]);
    Expert::new(world, path, *cfg, *vehicle).action_at(pose, s)
}
