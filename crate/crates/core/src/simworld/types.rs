use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pseudo-camera image plus ego-centric topology map.
///
/// `image` is `image_h × image_w` grayscale, row-major. `map` is
/// `map_size × map_size × 3` in HWC order with channels (all roads, routed
/// path, ego marker).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: Vec<f32>,
    pub image_h: usize,
    pub image_w: usize,
    pub map: Vec<f32>,
    pub map_size: usize,
}

pub const MAP_CHANNELS: usize = 3;
pub const CH_ROADS: usize = 0;
pub const CH_ROUTE: usize = 1;
pub const CH_EGO: usize = 2;

impl Observation {
    pub fn blank(image_size: usize, map_size: usize) -> Self {
        Self {
            image: vec![0.0; image_size * image_size],
            image_h: image_size,
            image_w: image_size,
            map: vec![0.0; map_size * map_size * MAP_CHANNELS],
            map_size,
        }
    }

    #[inline]
    pub fn map_at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.map[(row * self.map_size + col) * MAP_CHANNELS + ch]
    }

    /// Checks the value range and the route-on-roads invariant.
    pub fn validate(&self) -> Result<()> {
        if self.image.len() != self.image_h * self.image_w {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {}×{}",
                self.image.len(),
                self.image_h,
                self.image_w
            )));
        }
        if self.map.len() != self.map_size * self.map_size * MAP_CHANNELS {
            return Err(Error::Shape(format!(
                "map buffer has {} values, expected {s}×{s}×3",
                self.map.len(),
                s = self.map_size
            )));
        }
        if let Some(v) = self.image.iter().chain(&self.map).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 1]")));
        }
        for px in self.map.chunks(MAP_CHANNELS) {
            if px[CH_ROUTE] > 0.0 && px[CH_ROADS] <= 0.0 {
                return Err(Error::InvalidInput("routed pixel outside road channel".into()));
            }
        }
        Ok(())
    }
}

/// Normalized steering and throttle. Negative steering turns left.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub steering: f32,
    pub throttle: f32,
}

impl Action {
    pub fn new(steering: f32, throttle: f32) -> Self {
        Self { steering, throttle }
    }

    pub fn clamped(self) -> Self {
        Self {
            steering: self.steering.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(-1.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.steering.is_finite()
            && self.throttle.is_finite()
            && (-1.0..=1.0).contains(&self.steering)
            && (-1.0..=1.0).contains(&self.throttle)
    }
}

/// Driving-task label. Evaluation metadata only; never read by training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskTag {
    ST,
    SI,
    LT,
    RT,
    CA,
}

impl TaskTag {
    pub const ALL: [TaskTag; 5] = [TaskTag::ST, TaskTag::SI, TaskTag::LT, TaskTag::RT, TaskTag::CA];
    /// Class list after folding straight-intersection into straight.
    pub const MERGED: [TaskTag; 4] = [TaskTag::ST, TaskTag::LT, TaskTag::RT, TaskTag::CA];

    pub fn name(self) -> &'static str {
        match self {
            TaskTag::ST => "ST",
            TaskTag::SI => "SI",
            TaskTag::LT => "LT",
            TaskTag::RT => "RT",
            TaskTag::CA => "CA",
        }
    }

    pub fn merged(self) -> Self {
        match self {
            TaskTag::SI => TaskTag::ST,
            t => t,
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task tag `{s}`")))
    }
}

/// Task tag that counts how often it is read, so tests can prove the
/// training path never looks at it.
#[derive(Debug)]
pub struct TagCell {
    tag: TaskTag,
    reads: AtomicU64,
}

impl TagCell {
    pub fn new(tag: TaskTag) -> Self {
        Self {
            tag,
            reads: AtomicU64::new(0),
        }
    }

    pub fn get(&self) -> TaskTag {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.tag
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

impl Clone for TagCell {
    fn clone(&self) -> Self {
        Self::new(self.tag)
    }
}

impl PartialEq for TagCell {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag
    }
}

/// One demonstration record.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSample {
    pub observation: Observation,
    pub action: Action,
    tag: TagCell,
    pub episode_id: u64,
    pub step_index: u32,
}

impl DemoSample {
    pub fn new(observation: Observation, action: Action, task_tag: TaskTag, episode_id: u64, step_index: u32) -> Self {
        Self {
            observation,
            action,
            tag: TagCell::new(task_tag),
            episode_id,
            step_index,
        }
    }

    pub fn task_tag(&self) -> TaskTag {
        self.tag.get()
    }

    /// Number of times [`DemoSample::task_tag`] was called on this record.
    pub fn tag_reads(&self) -> u64 {
        self.tag.reads()
    }
}
