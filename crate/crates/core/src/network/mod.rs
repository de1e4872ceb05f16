//! Policy network: perception `P`, planning `Q` and control `R` modules,
//! the baseline/ablation variants, and checkpoint I/O.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{
    checkpoint_hash, load_checkpoint, params_hash, read_manifest, save_checkpoint, CheckpointManifest, TensorEntry,
};
pub use config::{ModelVariant, NetworkConfig};
pub use model::{
    control_forward, identity_planning, init_params, perception_forward, planning_forward, policy_forward,
    ControlCache, ControlOutput, ControlParams, MoNetParams, PerceptionCache, PerceptionOutput, PerceptionParams,
    PlanningCache, PlanningOutput, PlanningParams, PolicyCache, PolicyOutput, PolicySeed,
};
pub use crate::nn::self_attention;
