//! Corridor-world simulator: world generation, pseudo-camera and topology
//! map rendering, a scripted expert, unicycle dynamics, task tagging and
//! demonstration datasets.

mod augment;
mod dataset;
mod dynamics;
mod episode;
mod expert;
mod render;
mod route;
mod types;
mod world;

pub use augment::{augment_observation, augment_sample, shift_image, AugmentConfig};
pub use dataset::{
    generate_dataset, read_dataset_manifest, Dataset, DatasetConfig, DatasetManifest, EpisodeEntry, FieldLayout,
    ShardEntry, SplitEntry, TagRecord, DATASET_SCHEMA_VERSION,
};
pub use dynamics::{collides, step_dynamics, wrap_angle, VehicleConfig};
pub use episode::{
    run_episode, start_pose, Episode, NoiseConfig, NoisyExpert, Outcome, SimConfig, StepContext, StepRecord,
};
pub use expert::{avoidance_zones, expert_action, pursuit_steering, reference_offset, AvoidanceZone, Expert, ExpertConfig};
pub use render::{cast_ray, render_image, render_map, render_observation, RayHit, RenderConfig};
pub use route::{obstacle_arcs, task_tag, RoutePath, TagRules};
pub use types::*;
pub use world::{generate_world, segment_distance, Cell, Obstacle, Pose, WorldMap, WorldProfile};
