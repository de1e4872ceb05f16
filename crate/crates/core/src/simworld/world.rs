use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar pose. `x` grows east, `y` grows south (grid rows), heading is
/// measured from east and grows clockwise, so positive steering turns right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn forward(&self) -> [f64; 2] {
        [self.heading.cos(), self.heading.sin()]
    }

    /// Unit vector pointing to the vehicle's right.
    pub fn right(&self) -> [f64; 2] {
        [-self.heading.sin(), self.heading.cos()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Cell {
    Free = 0,
    Wall = 1,
    Obstacle = 2,
}

/// World-generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldProfile {
    /// Waypoint lattice size.
    pub lattice_cols: usize,
    pub lattice_rows: usize,
    /// Distance between neighbouring lattice waypoints, meters.
    pub spacing_m: f64,
    pub corridor_width_m: f64,
    pub cell_m: f64,
    /// Free border around the lattice (filled with wall), meters.
    pub margin_m: f64,
    pub min_intersections: usize,
    pub max_intersections: usize,
    /// Minimum number of edges on the spawn-to-goal route.
    pub min_route_edges: usize,
    /// Candidate obstacle areas along the route.
    pub obstacle_zones: usize,
    pub obstacle_probability: f64,
    /// Range of box side lengths, meters.
    pub obstacle_size_m: [f64; 2],
    /// Clearance kept between an obstacle zone and any waypoint, meters.
    pub obstacle_node_clearance_m: f64,
}

impl WorldProfile {
    /// Lattice corridors with at least one junction and obstacle zones.
    pub fn desk() -> Self {
        Self {
            lattice_cols: 4,
            lattice_rows: 3,
            spacing_m: 6.0,
            corridor_width_m: 2.0,
            cell_m: 0.25,
            margin_m: 2.0,
            min_intersections: 1,
            max_intersections: 4,
            min_route_edges: 3,
            obstacle_zones: 3,
            obstacle_probability: 0.7,
            obstacle_size_m: [0.5, 0.7],
            obstacle_node_clearance_m: 2.5,
        }
    }

    /// A single straight corridor without junctions or obstacles.
    pub fn straight() -> Self {
        Self {
            lattice_cols: 5,
            lattice_rows: 1,
            min_intersections: 0,
            max_intersections: 0,
            min_route_edges: 4,
            obstacle_zones: 0,
            obstacle_probability: 0.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.corridor_width_m / self.cell_m;
        if !(cells >= 3.0) {
            return Err(Error::Config(format!(
                "corridor width {} m is {cells:.2} cells of {} m; at least 3 cells required",
                self.corridor_width_m, self.cell_m
            )));
        }
        if self.lattice_cols * self.lattice_rows < 2 {
            return Err(Error::Config("lattice needs at least two waypoints".into()));
        }
        if self.corridor_width_m >= self.spacing_m {
            return Err(Error::Config("corridors wider than waypoint spacing merge into rooms".into()));
        }
        if self.min_intersections > self.max_intersections {
            return Err(Error::Config("min_intersections exceeds max_intersections".into()));
        }
        if self.min_route_edges == 0 {
            return Err(Error::Config("min_route_edges must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.obstacle_probability) {
            return Err(Error::Config("obstacle_probability outside [0, 1]".into()));
        }
        let [lo, hi] = self.obstacle_size_m;
        if !(lo > 0.0 && lo <= hi && hi < self.corridor_width_m / 2.0) {
            return Err(Error::Config(
                "obstacle sizes must be positive and narrower than half the corridor".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box `[min, max]` in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Obstacle {
    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

/// Generated corridor world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub seed: u64,
    pub cell_m: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major occupancy, `height × width`.
    pub cells: Vec<Cell>,
    pub nodes: Vec<[f64; 2]>,
    pub edges: Vec<(usize, usize)>,
    pub corridor_width_m: f64,
    pub obstacles: Vec<Obstacle>,
    pub spawn: usize,
    pub goal: usize,
}

impl WorldMap {
    pub fn extent_m(&self) -> [f64; 2] {
        [self.width as f64 * self.cell_m, self.height as f64 * self.cell_m]
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Cell {
        if x < 0.0 || y < 0.0 {
            return Cell::Wall;
        }
        let (c, r) = ((x / self.cell_m) as usize, (y / self.cell_m) as usize);
        if c >= self.width || r >= self.height {
            return Cell::Wall;
        }
        self.cells[r * self.width + c]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == node || b == node).count()
    }

    pub fn neighbours(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == node {
                    Some(b)
                } else if b == node {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn intersections(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.degree(n) >= 3).collect()
    }

    /// Unique path between two nodes of the corridor tree.
    pub fn path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev = vec![usize::MAX; self.nodes.len()];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            if n == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for m in self.neighbours(n) {
                if prev[m] == usize::MAX {
                    prev[m] = n;
                    queue.push_back(m);
                }
            }
        }
        None
    }

    /// Route from the world's spawn to its goal.
    pub fn default_route(&self) -> Vec<usize> {
        self.path(self.spawn, self.goal).expect("spawn and goal are connected")
    }

    /// Whether a disc of `radius` centred at `(x, y)` overlaps wall or obstacle.
    pub fn disc_collides(&self, x: f64, y: f64, radius: f64) -> bool {
        let c0 = ((x - radius) / self.cell_m).floor() as i64;
        let c1 = ((x + radius) / self.cell_m).floor() as i64;
        let r0 = ((y - radius) / self.cell_m).floor() as i64;
        let r1 = ((y + radius) / self.cell_m).floor() as i64;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let occupied = if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
                    true
                } else {
                    self.cells[r as usize * self.width + c as usize] != Cell::Free
                };
                if !occupied {
                    continue;
                }
                // Closest point of the cell square to the disc centre.
                let (lx, ly) = (c as f64 * self.cell_m, r as f64 * self.cell_m);
                let qx = x.clamp(lx, lx + self.cell_m);
                let qy = y.clamp(ly, ly + self.cell_m);
                if (qx - x).powi(2) + (qy - y).powi(2) < radius * radius {
                    return true;
                }
            }
        }
        false
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world serializes")
    }
}

/// Distance from `p` to segment `ab`.
pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

const MAX_ATTEMPTS: u64 = 1000;

/// Builds a world deterministically from `(seed, profile)`.
///
/// Candidates that violate the profile's junction or route constraints are
/// discarded and regenerated from a derived seed.
pub fn generate_world(seed: u64, profile: &WorldProfile) -> Result<WorldMap> {
    profile.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        if let Some(world) = try_generate(seed, profile, &mut rng) {
            return Ok(world);
        }
    }
    Err(Error::Config(format!(
        "no valid world for seed {seed} after {MAX_ATTEMPTS} attempts; profile constraints may be unsatisfiable"
    )))
}

fn try_generate(seed: u64, p: &WorldProfile, rng: &mut ChaCha8Rng) -> Option<WorldMap> {
    let (cols, rows) = (p.lattice_cols, p.lattice_rows);
    let nodes: Vec<[f64; 2]> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| [p.margin_m + c as f64 * p.spacing_m, p.margin_m + r as f64 * p.spacing_m])
        .collect();

    // Random spanning tree: Kruskal over shuffled lattice edges.
    let mut candidates = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let n = r * cols + c;
            if c + 1 < cols {
                candidates.push((n, n + 1));
            }
            if r + 1 < rows {
                candidates.push((n, n + cols));
            }
        }
    }
    candidates.shuffle(rng);
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut edges = Vec::new();
    for (a, b) in candidates {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();

    let extent = [
        2.0 * p.margin_m + (cols - 1) as f64 * p.spacing_m,
        2.0 * p.margin_m + (rows - 1) as f64 * p.spacing_m,
    ];
    let width = (extent[0] / p.cell_m).round() as usize;
    let height = (extent[1] / p.cell_m).round() as usize;
    let mut world = WorldMap {
        seed,
        cell_m: p.cell_m,
        width,
        height,
        cells: vec![Cell::Wall; width * height],
        nodes,
        edges,
        corridor_width_m: p.corridor_width_m,
        obstacles: Vec::new(),
        spawn: 0,
        goal: 0,
    };

    let junctions = world.intersections().len();
    if junctions < p.min_intersections || junctions > p.max_intersections {
        return None;
    }

    carve_corridors(&mut world);

    // Spawn and goal: a random pair of dead ends joined by a long enough
    // route that passes a junction whenever the world has one.
    let leaves: Vec<usize> = (0..world.nodes.len()).filter(|&n| world.degree(n) == 1).collect();
    let mut pairs = Vec::new();
    for &a in &leaves {
        for &b in &leaves {
            if a == b {
                continue;
            }
            let path = world.path(a, b)?;
            let through_junction = path.iter().any(|&n| world.degree(n) >= 3);
            if path.len() > p.min_route_edges && (junctions == 0 || through_junction) {
                pairs.push((a, b));
            }
        }
    }
    let &(spawn, goal) = pairs.choose(rng)?;
    world.spawn = spawn;
    world.goal = goal;

    place_obstacles(&mut world, p, rng);
    Some(world)
}

fn carve_corridors(world: &mut WorldMap) {
    let half = world.corridor_width_m / 2.0;
    for r in 0..world.height {
        for c in 0..world.width {
            let centre = [(c as f64 + 0.5) * world.cell_m, (r as f64 + 0.5) * world.cell_m];
            // Axis-aligned corridors: a cell is free when its centre lies in
            // the rectangle swept by the corridor (square ends at waypoints).
            let free = world.edges.iter().any(|&(a, b)| {
                let (pa, pb) = (world.nodes[a], world.nodes[b]);
                let lo = [pa[0].min(pb[0]) - half, pa[1].min(pb[1]) - half];
                let hi = [pa[0].max(pb[0]) + half, pa[1].max(pb[1]) + half];
                centre[0] > lo[0] && centre[0] < hi[0] && centre[1] > lo[1] && centre[1] < hi[1]
            });
            if free {
                world.cells[r * world.width + c] = Cell::Free;
            }
        }
    }
}

fn place_obstacles(world: &mut WorldMap, p: &WorldProfile, rng: &mut ChaCha8Rng) {
    if p.obstacle_zones == 0 {
        return;
    }
    let route = world.default_route();
    let mut zones: Vec<(usize, usize)> = route.windows(2).map(|w| (w[0], w[1])).collect();
    // Dead-end segments hold the spawn and goal; keep obstacles off them.
    if zones.len() > 2 {
        zones = zones[1..zones.len() - 1].to_vec();
    }
    zones.shuffle(rng);
    let half = p.corridor_width_m / 2.0;
    for &(a, b) in zones.iter().take(p.obstacle_zones) {
        if !rng.gen_bool(p.obstacle_probability) {
            continue;
        }
        let (pa, pb) = (world.nodes[a], world.nodes[b]);
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let span = len - 2.0 * p.obstacle_node_clearance_m;
        if span <= 0.0 {
            continue;
        }
        let along = p.obstacle_node_clearance_m + rng.gen::<f64>() * span;
        let dir = [(pb[0] - pa[0]) / len, (pb[1] - pa[1]) / len];
        let normal = [-dir[1], dir[0]];
        let size = rng.gen_range(p.obstacle_size_m[0]..=p.obstacle_size_m[1]);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        // Inner face a little past the centreline; the box reaches the wall.
        let inner = rng.gen_range(0.0..0.2);
        let lateral = side * (inner + (half - inner) / 2.0);
        let depth = half - inner;
        let centre = [
            pa[0] + dir[0] * along + normal[0] * lateral,
            pa[1] + dir[1] * along + normal[1] * lateral,
        ];
        // Extents along the corridor and across it, mapped to world axes.
        let (ex, ey) = if dir[0].abs() > 0.5 {
            (size / 2.0, depth / 2.0)
        } else {
            (depth / 2.0, size / 2.0)
        };
        let ob = Obstacle {
            min: [centre[0] - ex, centre[1] - ey],
            max: [centre[0] + ex, centre[1] + ey],
        };
        for r in 0..world.height {
            for c in 0..world.width {
                let cc = [(c as f64 + 0.5) * world.cell_m, (r as f64 + 0.5) * world.cell_m];
                if cc[0] > ob.min[0] && cc[0] < ob.max[0] && cc[1] > ob.min[1] && cc[1] < ob.max[1] {
                    let cell = &mut world.cells[r * world.width + c];
                    if *cell == Cell::Free {
                        *cell = Cell::Obstacle;
                    }
                }
            }
        }
        world.obstacles.push(ob);
    }
}
