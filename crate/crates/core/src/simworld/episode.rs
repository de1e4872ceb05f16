use std::cell::OnceCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{collides, step_dynamics, VehicleConfig};
use super::expert::{Expert, ExpertConfig};
use super::render::{render_observation, RenderConfig};
use super::route::{obstacle_arcs, task_tag, RoutePath, TagRules};
use super::types::{Action, Observation, TaskTag};
use super::world::{Pose, WorldMap, WorldProfile};
use crate::error::{Error, Result};

/// Everything needed to build worlds and drive in them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub world: WorldProfile,
    pub render: RenderConfig,
    pub vehicle: VehicleConfig,
    pub expert: ExpertConfig,
    pub tags: TagRules,
    /// Distance from the goal waypoint that counts as arrival, meters.
    pub goal_tolerance_m: f64,
    /// Step budget as a multiple of the route length at cruise speed.
    pub timeout_factor: f64,
}

impl SimConfig {
    pub fn desk() -> Self {
        Self {
            world: WorldProfile::desk(),
            render: RenderConfig::desk(),
            vehicle: VehicleConfig::default(),
            expert: ExpertConfig::default(),
            tags: TagRules::default(),
            goal_tolerance_m: 0.8,
            timeout_factor: 3.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            render: RenderConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.render.validate()?;
        let v = &self.vehicle;
        if !(v.dt > 0.0 && v.omega_max > 0.0 && v.v_max > 0.0 && v.radius > 0.0) {
            return Err(Error::Config("vehicle dt, omega_max, v_max and radius must be positive".into()));
        }
        if v.radius * 2.0 >= self.world.corridor_width_m {
            return Err(Error::Config("vehicle does not fit in the corridor".into()));
        }
        if !(self.expert.cruise > 0.0 && self.expert.cruise <= 1.0 && self.expert.lookahead_m > 0.0) {
            return Err(Error::Config("expert cruise must be in (0, 1] and lookahead positive".into()));
        }
        Ok(())
    }

    pub fn max_steps(&self, route_length: f64) -> usize {
        let per_step = self.expert.cruise * self.vehicle.v_max * self.vehicle.dt;
        (self.timeout_factor * route_length / per_step).ceil() as usize + 20
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Collision,
    Timeout,
}

/// Per-step view handed to a driver. The observation is rendered lazily.
pub struct StepContext<'a> {
    pub world: &'a WorldMap,
    pub route: &'a [usize],
    pub pose: Pose,
    pub step: usize,
    /// Expert label for this pose.
    pub expert: Action,
    render: &'a RenderConfig,
    observation: OnceCell<Observation>,
}

impl StepContext<'_> {
    pub fn observation(&self) -> Result<&Observation> {
        if let Some(o) = self.observation.get() {
            return Ok(o);
        }
        let o = render_observation(self.world, &self.pose, self.route, self.render)?;
        Ok(self.observation.get_or_init(|| o))
    }

    fn take_observation(self) -> Option<Observation> {
        self.observation.into_inner()
    }
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub pose: Pose,
    /// Action actually applied.
    pub action: Action,
    /// Expert label at this pose.
    pub expert: Action,
    pub tag: TaskTag,
    pub progress: f64,
    /// Rendered observation, when requested or used by the driver.
    pub observation: Option<Observation>,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub final_pose: Pose,
}

/// Start pose on the first route waypoint, facing along the route.
pub fn start_pose(world: &WorldMap, route: &[usize]) -> Pose {
    let a = world.nodes[route[0]];
    let b = world.nodes[route[1]];
    Pose::new(a[0], a[1], (b[1] - a[1]).atan2(b[0] - a[0]))
}

/// Closed-loop episode: at every step the driver picks an action, the
/// vehicle moves, and the run ends on arrival, collision, or timeout.
pub fn run_episode(
    world: &WorldMap,
    route: &[usize],
    start: Pose,
    cfg: &SimConfig,
    keep_observations: bool,
    driver: &mut dyn FnMut(&StepContext<'_>) -> Result<Action>,
) -> Result<Episode> {
    if route.len() < 2 {
        return Err(Error::InvalidInput("route needs at least two waypoints".into()));
    }
    let path = RoutePath::new(world, route);
    let obstacles = obstacle_arcs(world, &path);
    let mut expert = Expert::new(world, path.clone(), cfg.expert, cfg.vehicle);
    let goal = *path.points().last().unwrap();
    let max_steps = cfg.max_steps(path.length());
    let mut pose = start;
    let mut steps = Vec::new();
    if collides(world, &pose, &cfg.vehicle) {
        return Ok(Episode {
            steps,
            outcome: Outcome::Collision,
            final_pose: pose,
        });
    }
    for step in 0..max_steps {
        let s = expert.track(&pose);
        let label = expert.action_at(&pose, s);
        let tag = task_tag(world, &path, &obstacles, &pose, s, &cfg.tags);
        let ctx = StepContext {
            world,
            route,
            pose,
            step,
            expert: label,
            render: &cfg.render,
            observation: OnceCell::new(),
        };
        if keep_observations {
            ctx.observation()?;
        }
        let action = driver(&ctx)?.clamped();
        let observation = ctx.take_observation().filter(|_| keep_observations);
        steps.push(StepRecord {
            step,
            pose,
            action,
            expert: label,
            tag,
            progress: s,
            observation,
        });
        pose = step_dynamics(&pose, action, &cfg.vehicle);
        if collides(world, &pose, &cfg.vehicle) {
            return Ok(Episode {
                steps,
                outcome: Outcome::Collision,
                final_pose: pose,
            });
        }
        let to_goal = ((pose.x - goal[0]).powi(2) + (pose.y - goal[1]).powi(2)).sqrt();
        if to_goal <= cfg.goal_tolerance_m {
            return Ok(Episode {
                steps,
                outcome: Outcome::Goal,
                final_pose: pose,
            });
        }
    }
    Ok(Episode {
        steps,
        outcome: Outcome::Timeout,
        final_pose: pose,
    })
}

/// Steering perturbations used while recording demonstrations, so the
/// data contains recoveries from off-centre poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-step chance of starting a perturbation.
    pub start_probability: f64,
    pub magnitude: [f64; 2],
    pub duration_steps: [usize; 2],
    /// Initial lateral offset range (meters) and heading error (radians).
    pub start_lateral_m: f64,
    pub start_heading_rad: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            start_probability: 0.05,
            magnitude: [0.2, 0.5],
            duration_steps: [2, 5],
            start_lateral_m: 0.3,
            start_heading_rad: 0.2,
        }
    }
}

/// Expert driver with injected steering perturbations. Labels stay clean.
pub struct NoisyExpert<R> {
    rng: R,
    noise: NoiseConfig,
    remaining: usize,
    offset: f64,
}

impl<R: Rng> NoisyExpert<R> {
    pub fn new(rng: R, noise: NoiseConfig) -> Self {
        Self {
            rng,
            noise,
            remaining: 0,
            offset: 0.0,
        }
    }

    pub fn perturbed_start(&mut self, world: &WorldMap, route: &[usize]) -> Pose {
        let p = start_pose(world, route);
        let lateral = self.rng.gen_range(-1.0..=1.0) * self.noise.start_lateral_m;
        let r = p.right();
        Pose::new(
            p.x + r[0] * lateral,
            p.y + r[1] * lateral,
            p.heading + self.rng.gen_range(-1.0..=1.0) * self.noise.start_heading_rad,
        )
    }

    pub fn act(&mut self, ctx: &StepContext<'_>) -> Action {
        if self.remaining == 0 && self.rng.gen_bool(self.noise.start_probability) {
            let [lo, hi] = self.noise.duration_steps;
            self.remaining = self.rng.gen_range(lo..=hi.max(lo));
            let sign = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            self.offset = sign * self.rng.gen_range(self.noise.magnitude[0]..=self.noise.magnitude[1]);
        }
        let mut a = ctx.expert;
        if self.remaining > 0 {
            self.remaining -= 1;
            a.steering = (a.steering as f64 + self.offset) as f32;
        }
        a.clamped()
    }
}
