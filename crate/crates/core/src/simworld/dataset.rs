use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode, NoiseConfig, NoisyExpert, Outcome, SimConfig};
use super::types::{Action, DemoSample, Observation, TaskTag, MAP_CHANNELS};
use super::world::generate_world;
use crate::error::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const RECORDS_PER_SHARD: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub sim: SimConfig,
    pub world_seeds: Vec<u64>,
    pub episodes_per_world: usize,
    pub noise: NoiseConfig,
    pub validation_fraction: f64,
    /// Seeds episode noise streams and the split.
    pub seed: u64,
}

impl DatasetConfig {
    /// About 5k samples at desk resolution.
    pub fn desk(seed: u64) -> Self {
        Self {
            sim: SimConfig::desk(),
            world_seeds: (0..14).map(|i| seed.wrapping_mul(1000).wrapping_add(i)).collect(),
            episodes_per_world: 2,
            noise: NoiseConfig::default(),
            validation_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.world_seeds.is_empty() || self.episodes_per_world == 0 {
            return Err(Error::Config("dataset needs at least one world and one episode".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub name: String,
    /// Offset within a record, in float32 values.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub first_record: usize,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub episode_id: u64,
    pub world_seed: u64,
    pub route: Vec<usize>,
    pub first_record: usize,
    pub records: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub train_episodes: Vec<u64>,
    pub validation_episodes: Vec<u64>,
    pub train_samples: usize,
    pub validation_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub sample_count: usize,
    pub dtype: String,
    /// Each record is `record_floats` contiguous little-endian float32
    /// values laid out as described by `fields`.
    pub record_floats: usize,
    pub fields: Vec<FieldLayout>,
    pub shards: Vec<ShardEntry>,
    pub tags_file: String,
    pub tag_vocabulary: Vec<String>,
    pub split: SplitEntry,
    pub episodes: Vec<EpisodeEntry>,
    pub generator: DatasetConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub task_tag: TaskTag,
    pub episode_id: u64,
    pub step_index: u32,
}

/// Loaded dataset with its split as record indices.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<DemoSample>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

struct RecordedEpisode {
    entry: EpisodeEntry,
    samples: Vec<DemoSample>,
}

fn record_episode(cfg: &DatasetConfig, world_index: usize, k: usize) -> Result<RecordedEpisode> {
    let world_seed = cfg.world_seeds[world_index];
    let episode_id = (world_index * cfg.episodes_per_world + k) as u64;
    let world = generate_world(world_seed, &cfg.sim.world)?;
    let mut route = world.default_route();
    if k % 2 == 1 {
        route.reverse();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(episode_id + 1);
    let mut driver = NoisyExpert::new(rng, cfg.noise);
    let start = driver.perturbed_start(&world, &route);
    let episode = run_episode(&world, &route, start, &cfg.sim, true, &mut |ctx| Ok(driver.act(ctx)))?;
    let samples = episode
        .steps
        .into_iter()
        .map(|s| {
            let obs = s.observation.expect("observations kept");
            DemoSample::new(obs, s.expert, s.tag, episode_id, s.step as u32)
        })
        .collect::<Vec<_>>();
    Ok(RecordedEpisode {
        entry: EpisodeEntry {
            episode_id,
            world_seed,
            route,
            first_record: 0,
            records: samples.len(),
            outcome: episode.outcome,
        },
        samples,
    })
}

/// Picks validation episodes whose sample total is as close as possible to
/// `fraction` of all samples, scanning episodes in a seeded random order.
fn choose_validation(lengths: &[usize], fraction: f64, seed: u64) -> Vec<bool> {
    let n = lengths.len();
    let total: usize = lengths.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut rng);
    // Subset-sum reachability with back-pointers.
    let mut from: Vec<Option<(usize, usize)>> = vec![None; total + 1];
    let mut reachable = vec![false; total + 1];
    reachable[0] = true;
    for &e in &order {
        let len = lengths[e];
        for s in (len..=total).rev() {
            if !reachable[s] && reachable[s - len] {
                reachable[s] = true;
                from[s] = Some((s - len, e));
            }
        }
    }
    let best = (0..=total)
        .filter(|&s| reachable[s])
        .min_by_key(|&s| (s as i64 - target as i64).abs())
        .unwrap_or(0);
    let mut chosen = vec![false; n];
    let mut s = best;
    while let Some((prev, e)) = from[s] {
        chosen[e] = true;
        s = prev;
    }
    chosen
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Records demonstrations with the noisy expert and writes the dataset
/// directory. Episodes are generated in parallel; the output does not
/// depend on the worker count.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let jobs: Vec<(usize, usize)> = (0..cfg.world_seeds.len())
        .flat_map(|w| (0..cfg.episodes_per_world).map(move |k| (w, k)))
        .collect();

    let r = &cfg.sim.render;
    let image_floats = r.image_size * r.image_size;
    let map_floats = r.map_size * r.map_size * MAP_CHANNELS;
    let record_floats = image_floats + map_floats + 2;

    let mut episodes = Vec::new();
    let mut tags = Vec::new();
    let mut shards: Vec<ShardEntry> = Vec::new();
    let mut writer: Option<BufWriter<File>> = None;
    let mut written = 0usize;
    let mut lengths = Vec::new();

    for chunk in jobs.chunks(rayon::current_num_threads().max(1) * 2) {
        let recorded = chunk
            .par_iter()
            .map(|&(w, k)| record_episode(cfg, w, k))
            .collect::<Result<Vec<_>>>()?;
        for mut ep in recorded {
            ep.entry.first_record = written;
            lengths.push(ep.samples.len());
            for s in &ep.samples {
                if written % RECORDS_PER_SHARD == 0 {
                    if let Some(mut w) = writer.take() {
                        w.flush().map_err(|e| Error::io(out, e))?;
                    }
                    let name = format!("shard-{:05}.f32", shards.len());
                    let path = out.join(&name);
                    writer = Some(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?));
                    shards.push(ShardEntry {
                        file: name,
                        first_record: written,
                        records: 0,
                    });
                }
                let w = writer.as_mut().expect("open shard");
                let shard_path = out.join(&shards.last().unwrap().file);
                write_f32s(w, &s.observation.image).map_err(|e| Error::io(&shard_path, e))?;
                write_f32s(w, &s.observation.map).map_err(|e| Error::io(&shard_path, e))?;
                write_f32s(w, &[s.action.steering, s.action.throttle]).map_err(|e| Error::io(&shard_path, e))?;
                shards.last_mut().unwrap().records += 1;
                tags.push(TagRecord {
                    task_tag: s.task_tag(),
                    episode_id: s.episode_id,
                    step_index: s.step_index,
                });
                written += 1;
            }
            episodes.push(ep.entry);
        }
    }
    if let Some(mut w) = writer.take() {
        w.flush().map_err(|e| Error::io(out, e))?;
    }

    let validation = choose_validation(&lengths, cfg.validation_fraction, cfg.seed);
    let mut split = SplitEntry {
        train_episodes: Vec::new(),
        validation_episodes: Vec::new(),
        train_samples: 0,
        validation_samples: 0,
    };
    for (e, is_val) in episodes.iter().zip(&validation) {
        if *is_val {
            split.validation_episodes.push(e.episode_id);
            split.validation_samples += e.records;
        } else {
            split.train_episodes.push(e.episode_id);
            split.train_samples += e.records;
        }
    }

    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        sample_count: written,
        dtype: "float32-le".into(),
        record_floats,
        fields: vec![
            FieldLayout {
                name: "image".into(),
                offset: 0,
                shape: vec![r.image_size, r.image_size, 1],
            },
            FieldLayout {
                name: "map".into(),
                offset: image_floats,
                shape: vec![r.map_size, r.map_size, MAP_CHANNELS],
            },
            FieldLayout {
                name: "action".into(),
                offset: image_floats + map_floats,
                shape: vec![2],
            },
        ],
        shards,
        tags_file: "tags.json".into(),
        tag_vocabulary: TaskTag::ALL.iter().map(|t| t.name().to_string()).collect(),
        split,
        episodes,
        generator: cfg.clone(),
    };
    write_json(&out.join("tags.json"), &tags)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported dataset schema {}",
            path.display(),
            m.schema_version
        )));
    }
    Ok(m)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_dataset_manifest(dir)?;
        let tags_path = dir.join(&manifest.tags_file);
        let tags_text = fs::read_to_string(&tags_path).map_err(|e| Error::io(&tags_path, e))?;
        let tags: Vec<TagRecord> = serde_json::from_str(&tags_text).map_err(|e| Error::json(&tags_path, e))?;
        if tags.len() != manifest.sample_count {
            return Err(Error::InvalidInput(format!(
                "{}: {} tag records for {} samples",
                tags_path.display(),
                tags.len(),
                manifest.sample_count
            )));
        }
        let field = |name: &str| {
            manifest
                .fields
                .iter()
                .find(|f| f.name == name)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("manifest lacks field `{name}`")))
        };
        let (fi, fm, fa) = (field("image")?, field("map")?, field("action")?);
        let (ih, iw) = (fi.shape[0], fi.shape[1]);
        let ms = fm.shape[0];
        let rf = manifest.record_floats;
        let mut samples = Vec::with_capacity(manifest.sample_count);
        let mut buf = vec![0u8; rf * 4];
        for shard in &manifest.shards {
            let path = dir.join(&shard.file);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let len = file.metadata().map_err(|e| Error::io(&path, e))?.len() as usize;
            if len != shard.records * rf * 4 {
                return Err(Error::InvalidInput(format!(
                    "{}: {len} bytes, expected {} records of {rf} floats",
                    path.display(),
                    shard.records
                )));
            }
            let mut reader = BufReader::new(file);
            for k in 0..shard.records {
                reader.read_exact(&mut buf).map_err(|e| Error::io(&path, e))?;
                let floats: Vec<f32> = buf
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                let t = &tags[shard.first_record + k];
                let observation = Observation {
                    image: floats[fi.offset..fi.offset + ih * iw].to_vec(),
                    image_h: ih,
                    image_w: iw,
                    map: floats[fm.offset..fm.offset + ms * ms * MAP_CHANNELS].to_vec(),
                    map_size: ms,
                };
                let action = Action::new(floats[fa.offset], floats[fa.offset + 1]);
                samples.push(DemoSample::new(observation, action, t.task_tag, t.episode_id, t.step_index));
            }
        }
        if samples.len() != manifest.sample_count {
            return Err(Error::InvalidInput(format!(
                "shards hold {} records, manifest says {}",
                samples.len(),
                manifest.sample_count
            )));
        }
        let val: std::collections::HashSet<u64> = manifest.split.validation_episodes.iter().copied().collect();
        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for (i, s) in samples.iter().enumerate() {
            if val.contains(&s.episode_id) {
                validation.push(i);
            } else {
                train.push(i);
            }
        }
        Ok(Self {
            manifest,
            samples,
            train,
            validation,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
