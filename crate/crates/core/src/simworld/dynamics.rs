use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::types::Action;
use super::world::{Pose, WorldMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    /// Yaw rate at full steering, rad/s.
    pub omega_max: f64,
    /// Speed at full throttle, m/s.
    pub v_max: f64,
    pub dt: f64,
    /// Collision disc radius, meters.
    pub radius: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            omega_max: 1.2,
            v_max: 1.5,
            dt: 0.2,
            radius: 0.2,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Unicycle update: turn first, then advance along the new heading.
pub fn step_dynamics(pose: &Pose, action: Action, vehicle: &VehicleConfig) -> Pose {
    let a = action.clamped();
    let heading = wrap_angle(pose.heading + a.steering as f64 * vehicle.omega_max * vehicle.dt);
    let v = a.throttle as f64 * vehicle.v_max;
    Pose {
        x: pose.x + v * vehicle.dt * heading.cos(),
        y: pose.y + v * vehicle.dt * heading.sin(),
        heading,
    }
}

/// Whether the vehicle disc at `pose` touches a wall or an obstacle.
pub fn collides(world: &WorldMap, pose: &Pose, vehicle: &VehicleConfig) -> bool {
    world.disc_collides(pose.x, pose.y, vehicle.radius)
}
