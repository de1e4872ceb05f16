use serde::{Deserialize, Serialize};

use super::types::{Observation, CH_EGO, CH_ROADS, CH_ROUTE, MAP_CHANNELS};
use super::world::{segment_distance, Cell, Pose, WorldMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub image_size: usize,
    pub fov_deg: f64,
    pub max_range_m: f64,
    /// Walls closer than this render at full brightness.
    pub near_m: f64,
    /// Projected wall height at 1 m, as a fraction of the image height.
    pub wall_height: f64,
    pub ceiling: f32,
    pub floor_far: f32,
    pub floor_near: f32,
    /// Brightness factor for obstacle faces relative to walls.
    pub obstacle_shade: f32,
    /// Brightness factor for faces parallel to the x axis.
    pub side_shade: f32,
    pub map_size: usize,
    pub map_m_per_px: f64,
    /// Half thickness of rasterized corridor lines, meters.
    pub road_half_width_m: f64,
    /// Half size of the ego marker, pixels.
    pub ego_marker_px: usize,
}

impl RenderConfig {
    pub fn desk() -> Self {
        Self {
            image_size: 96,
            fov_deg: 90.0,
            max_range_m: 20.0,
            near_m: 0.6,
            wall_height: 0.9,
            ceiling: 0.08,
            floor_far: 0.2,
            floor_near: 0.35,
            obstacle_shade: 0.45,
            side_shade: 0.75,
            map_size: 64,
            map_m_per_px: 0.25,
            road_half_width_m: 0.3,
            ego_marker_px: 1,
        }
    }

    pub fn paper() -> Self {
        Self {
            image_size: 224,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.map_size < 2 {
            return Err(Error::Config("image and map sizes must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!("field of view {} outside (0, 180)", self.fov_deg)));
        }
        if !(self.near_m > 0.0 && self.max_range_m > self.near_m && self.map_m_per_px > 0.0) {
            return Err(Error::Config("render distances must be positive and ordered".into()));
        }
        Ok(())
    }
}

/// Result of casting one ray through the occupancy grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub cell: Cell,
    /// Hit a face perpendicular to the y axis.
    pub horizontal_face: bool,
}

/// Grid traversal (DDA) from `(x, y)` along `angle` until a non-free cell.
pub fn cast_ray(world: &WorldMap, x: f64, y: f64, angle: f64, max_range: f64) -> RayHit {
    let (dx, dy) = (angle.cos(), angle.sin());
    let cs = world.cell_m;
    let (mut cx, mut cy) = ((x / cs).floor() as i64, (y / cs).floor() as i64);
    let step_x = if dx >= 0.0 { 1 } else { -1 };
    let step_y = if dy >= 0.0 { 1 } else { -1 };
    let delta_x = if dx == 0.0 { f64::INFINITY } else { cs / dx.abs() };
    let delta_y = if dy == 0.0 { f64::INFINITY } else { cs / dy.abs() };
    let mut side_x = if dx >= 0.0 {
        ((cx + 1) as f64 * cs - x) / dx.abs()
    } else {
        (x - cx as f64 * cs) / dx.abs()
    };
    let mut side_y = if dy >= 0.0 {
        ((cy + 1) as f64 * cs - y) / dy.abs()
    } else {
        (y - cy as f64 * cs) / dy.abs()
    };
    if dx == 0.0 {
        side_x = f64::INFINITY;
    }
    if dy == 0.0 {
        side_y = f64::INFINITY;
    }
    loop {
        let (t, horizontal_face) = if side_x < side_y {
            let t = side_x;
            side_x += delta_x;
            cx += step_x;
            (t, false)
        } else {
            let t = side_y;
            side_y += delta_y;
            cy += step_y;
            (t, true)
        };
        if t > max_range {
            return RayHit {
                distance: max_range,
                cell: Cell::Free,
                horizontal_face,
            };
        }
        let cell = if cx < 0 || cy < 0 || cx as usize >= world.width || cy as usize >= world.height {
            Cell::Wall
        } else {
            world.cells[cy as usize * world.width + cx as usize]
        };
        if cell != Cell::Free {
            return RayHit {
                distance: t,
                cell,
                horizontal_face,
            };
        }
    }
}

/// Pseudo-camera image: one ray per column, wall height and brightness
/// falling off with perpendicular distance.
pub fn render_image(world: &WorldMap, pose: &Pose, cfg: &RenderConfig) -> Vec<f32> {
    let n = cfg.image_size;
    let mut img = vec![0.0f32; n * n];
    let half = n as f64 / 2.0;
    let focal = half / (cfg.fov_deg.to_radians() / 2.0).tan();
    for row in 0..n {
        let v = if (row as f64 + 0.5) < half {
            cfg.ceiling
        } else {
            let t = ((row as f64 + 0.5 - half) / half) as f32;
            cfg.floor_far + (cfg.floor_near - cfg.floor_far) * t
        };
        img[row * n..(row + 1) * n].fill(v);
    }
    for col in 0..n {
        let offset = ((col as f64 + 0.5) - half) / focal;
        let rel = offset.atan();
        let hit = cast_ray(world, pose.x, pose.y, pose.heading + rel, cfg.max_range_m);
        if hit.cell == Cell::Free {
            continue;
        }
        let perp = (hit.distance * rel.cos()).max(1e-6);
        let mut shade = (cfg.near_m / perp).min(1.0) as f32;
        if hit.horizontal_face {
            shade *= cfg.side_shade;
        }
        if hit.cell == Cell::Obstacle {
            shade *= cfg.obstacle_shade;
        }
        let line = n as f64 * cfg.wall_height / perp;
        let top = (half - line / 2.0).max(0.0);
        let bottom = (half + line / 2.0).min(n as f64);
        for row in (top as usize)..(bottom.ceil() as usize).min(n) {
            let centre = row as f64 + 0.5;
            if centre >= top && centre < bottom {
                img[row * n + col] = shade;
            }
        }
    }
    img
}

/// Ego-centric topology map: heading points up, ego at the centre.
pub fn render_map(world: &WorldMap, pose: &Pose, route: &[usize], cfg: &RenderConfig) -> Result<Vec<f32>> {
    let s = cfg.map_size;
    let route_edges = route_edges(world, route)?;
    let (fwd, right) = (pose.forward(), pose.right());
    let reach = (s as f64) * cfg.map_m_per_px * std::f64::consts::SQRT_2 / 2.0 + cfg.road_half_width_m;
    let near = |&(a, b): &(usize, usize)| {
        segment_distance([pose.x, pose.y], world.nodes[a], world.nodes[b]) <= reach
    };
    let edges: Vec<(usize, usize)> = world.edges.iter().copied().filter(near).collect();
    let routed: Vec<(usize, usize)> = route_edges.into_iter().filter(near).collect();
    let mut map = vec![0.0f32; s * s * MAP_CHANNELS];
    let centre = s as f64 / 2.0;
    for r in 0..s {
        for c in 0..s {
            let ahead = (centre - (r as f64 + 0.5)) * cfg.map_m_per_px;
            let side = ((c as f64 + 0.5) - centre) * cfg.map_m_per_px;
            let p = [
                pose.x + ahead * fwd[0] + side * right[0],
                pose.y + ahead * fwd[1] + side * right[1],
            ];
            let on = |list: &[(usize, usize)]| {
                list.iter()
                    .any(|&(a, b)| segment_distance(p, world.nodes[a], world.nodes[b]) <= cfg.road_half_width_m)
            };
            let px = &mut map[(r * s + c) * MAP_CHANNELS..(r * s + c + 1) * MAP_CHANNELS];
            if on(&edges) {
                px[CH_ROADS] = 1.0;
                if on(&routed) {
                    px[CH_ROUTE] = 1.0;
                }
            }
        }
    }
    let m = cfg.ego_marker_px as isize;
    let mid = (s / 2) as isize;
    for r in (mid - m).max(0)..(mid + m).min(s as isize) {
        for c in (mid - m).max(0)..(mid + m).min(s as isize) {
            map[(r as usize * s + c as usize) * MAP_CHANNELS + CH_EGO] = 1.0;
        }
    }
    Ok(map)
}

fn route_edges(world: &WorldMap, route: &[usize]) -> Result<Vec<(usize, usize)>> {
    route
        .windows(2)
        .map(|w| {
            let e = (w[0].min(w[1]), w[0].max(w[1]));
            if world.edges.contains(&e) {
                Ok(e)
            } else {
                Err(Error::InvalidInput(format!("route step {} -> {} is not a corridor", w[0], w[1])))
            }
        })
        .collect()
}

/// Camera image and topology map for `pose`.
pub fn render_observation(world: &WorldMap, pose: &Pose, route: &[usize], cfg: &RenderConfig) -> Result<Observation> {
    if world.cell_at(pose.x, pose.y) != Cell::Free {
        return Err(Error::PoseInCollision { x: pose.x, y: pose.y });
    }
    Ok(Observation {
        image: render_image(world, pose, cfg),
        image_h: cfg.image_size,
        image_w: cfg.image_size,
        map: render_map(world, pose, route, cfg)?,
        map_size: cfg.map_size,
    })
}
