use std::path::Path;

use monet::eval::DecisionSetConfig;
use monet::interpret::DecoderConfig;
use monet::simworld::{DatasetConfig, NoiseConfig, SimConfig, WorldProfile};
use monet::training::{LossConfig, RunConfig, TrainConfig};
use monet::{ModelVariant, NetworkConfig};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// World `k` uses seed `seed · 1000 + k`.
    pub worlds: usize,
    pub episodes_per_world: usize,
    pub validation_fraction: f64,
    pub noise: NoiseConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalWorlds {
    /// Same generator settings as the training worlds.
    Sim,
    /// Single corridors without junctions or obstacles.
    Straight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    /// Rollout world `k` uses seed `world_seed_base + k`.
    pub world_seed_base: u64,
    pub worlds: EvalWorlds,
    /// Steps on either side of a task change.
    pub entropy_window: usize,
    pub decisions: DecisionSetConfig,
}

/// Everything one experiment needs, loaded from TOML over profile defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub variant: ModelVariant,
    pub sim: SimConfig,
    pub dataset: DatasetSection,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
    pub decoder: DecoderConfig,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile, seed: u64) -> Self {
        let (sim, network, mut training, loss, worlds, episodes_per_world) = match profile {
            Profile::Desk => (
                SimConfig::desk(),
                NetworkConfig::desk(),
                TrainConfig::desk(),
                LossConfig::desk(),
                14,
                2,
            ),
            Profile::Paper => (
                SimConfig::paper(),
                NetworkConfig::paper(),
                TrainConfig::paper(),
                LossConfig::default(),
                400,
                4,
            ),
        };
        training.seed = seed;
        let desk = DatasetConfig::desk(seed);
        Self {
            profile,
            seed,
            variant: ModelVariant::MoNet,
            sim,
            dataset: DatasetSection {
                worlds,
                episodes_per_world,
                validation_fraction: desk.validation_fraction,
                noise: desk.noise,
            },
            network,
            loss,
            training,
            decoder: DecoderConfig::default(),
            eval: EvalSection {
                episodes: 20,
                world_seed_base: 1_000_000,
                worlds: EvalWorlds::Sim,
                entropy_window: 10,
                decisions: DecisionSetConfig::default(),
            },
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            sim: self.sim.clone(),
            world_seeds: (0..self.dataset.worlds as u64)
                .map(|i| self.seed.wrapping_mul(1000).wrapping_add(i))
                .collect(),
            episodes_per_world: self.dataset.episodes_per_world,
            noise: self.dataset.noise,
            validation_fraction: self.dataset.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            variant: self.variant,
            network: self.network.clone(),
            train: self.training.clone(),
            loss: self.loss,
        }
        .resolved()
    }

    pub fn eval_world_profile(&self) -> WorldProfile {
        match self.eval.worlds {
            EvalWorlds::Sim => self.sim.world.clone(),
            EvalWorlds::Straight => WorldProfile::straight(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset_config().validate()?;
        self.run_config().validate()?;
        if self.decoder.folds < 2 {
            return Err(CliError::Usage("decoder.folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("experiment.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}

/// Overlays `over` onto `base`. Tables merge key by key; a table carrying a
/// different `kind` tag replaces the base table whole.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            let retag = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves the experiment configuration: profile defaults, then the file,
/// then `seed_flag`. Without a seed in the flag or file, `MONET_SEED` is
/// used, then 0.
pub fn load(path: Option<&Path>, seed_flag: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let file: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            text.parse::<toml::Table>()
                .map(Value::Table)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => Value::Table(Default::default()),
    };
    let profile = match file.get("profile") {
        Some(v) => Profile::deserialize(v.clone()).map_err(|e| CliError::Usage(format!("profile: {e}")))?,
        None => Profile::default(),
    };
    let file_seed = match file.get("seed") {
        Some(v) => Some(u64::deserialize(v.clone()).map_err(|e| CliError::Usage(format!("seed: {e}")))?),
        None => None,
    };
    let env_seed = match std::env::var("MONET_SEED") {
        Ok(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("MONET_SEED={s} is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    let seed = seed_flag.or(file_seed).or(env_seed).unwrap_or(0);

    let mut value = Value::try_from(ExperimentConfig::defaults(profile, seed)).expect("defaults serialize");
    merge(&mut value, file);
    let mut cfg = ExperimentConfig::deserialize(value).map_err(|e| match path {
        Some(p) => CliError::Usage(format!("{}: {e}", p.display())),
        None => CliError::Usage(e.to_string()),
    })?;
    if let Some(s) = seed_flag {
        cfg.seed = s;
        cfg.training.seed = s;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        for p in [Profile::Desk, Profile::Paper] {
            let c = ExperimentConfig::defaults(p, 3);
            let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn partial_tables_merge_and_retag() {
        let mut base = Value::try_from(ExperimentConfig::defaults(Profile::Desk, 0)).unwrap();
        let over: toml::Table = toml::from_str(
            "[training]\nbatch_size = 8\n[training.schedule]\nkind = \"constant\"\n",
        )
        .unwrap();
        merge(&mut base, Value::Table(over));
        let c = ExperimentConfig::deserialize(base).unwrap();
        assert_eq!(c.training.batch_size, 8);
        assert_eq!(c.training.schedule, monet::training::LrSchedule::Constant);
        assert_eq!(c.training.total_iterations, TrainConfig::desk().total_iterations);
    }
}
