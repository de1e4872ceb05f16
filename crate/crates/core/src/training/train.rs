use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::{loss_and_gradients, BatchItem, LossBreakdown, LossTerms};
use super::loss::{imitation_loss, LossConfig};
use super::optim::{Adam, AdamConfig, LrSchedule};
use super::pairing::pair_batch;
use crate::error::{Error, Result};
use crate::network::{init_params, policy_forward, save_checkpoint, ModelVariant, MoNetParams, NetworkConfig};
use crate::nn::ParamSet;
use crate::simworld::{augment_observation, AugmentConfig, Dataset, DemoSample, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam(AdamConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adam(AdamConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iterations: u64,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Checkpoint and validation interval, iterations.
    pub checkpoint_every: u64,
    /// Evaluate validation L1 on at most this many samples (evenly strided).
    #[serde(default)]
    pub validation_cap: Option<usize>,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            batch_size: 512,
            total_iterations: 650_000,
            learning_rate: 3e-4,
            schedule: LrSchedule::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            checkpoint_every: 10_000,
            validation_cap: None,
        }
    }

    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            total_iterations: 2000,
            checkpoint_every: 250,
            validation_cap: Some(512),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size={} but the contrastive term needs pairs (>= 2)",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate={} must be > 0", self.learning_rate)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be > 0".into()));
        }
        if self.augment.max_shift < 0 {
            return Err(Error::Config("augment.max_shift must be >= 0".into()));
        }
        self.schedule.validate()
    }
}

/// Everything a run was started with, written to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: ModelVariant,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
}

impl RunConfig {
    /// Applies variant rules: variants trained without the contrastive
    /// term get `λ_LGC = 0`.
    pub fn resolved(mut self) -> Self {
        if !self.variant.uses_lgc() {
            self.loss.lambda_lgc = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }
}

/// Samples plus a train/validation split, borrowed.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub samples: &'a [DemoSample],
    pub train: &'a [usize],
    pub validation: &'a [usize],
}

impl<'a> From<&'a Dataset> for TrainData<'a> {
    fn from(d: &'a Dataset) -> Self {
        Self {
            samples: &d.samples,
            train: &d.train,
            validation: &d.validation,
        }
    }
}

/// One `metrics.csv` row. Row 0 holds only the initial validation loss;
/// row `t` holds the losses of the batch used for update `t`, the rate it
/// used, and validation L1 after the update on checkpoint iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub train_imitation: Option<f64>,
    pub train_lgc: Option<f64>,
    pub validation_l1: Option<f64>,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "iteration,train_imitation,train_lgc,validation_l1,lr";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration,
            opt(r.train_imitation),
            opt(r.train_lgc),
            opt(r.validation_l1),
            r.lr
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: MoNetParams<f32>,
    pub config: RunConfig,
    pub metrics: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// `(iteration, validation L1)` pairs.
    pub fn validation_curve(&self) -> Vec<(u64, f64)> {
        self.metrics
            .iter()
            .filter_map(|r| r.validation_l1.map(|v| (r.iteration, v)))
            .collect()
    }
}

/// Mean imitation loss (L1 with throttle weight) over `indices`.
pub fn mean_imitation_loss(
    params: &MoNetParams<f32>,
    samples: &[DemoSample],
    indices: &[usize],
    lambda_tau: f64,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let losses = indices
        .par_iter()
        .map(|&i| {
            let s = &samples[i];
            let out = policy_forward::<f32>(&s.observation, params)?;
            let target = [s.action.steering, s.action.throttle];
            Ok(imitation_loss(out.action, target, lambda_tau as f32) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / indices.len() as f64)
}

fn strided(indices: &[usize], cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c > 0 && c < indices.len() => (0..c).map(|k| indices[k * indices.len() / c]).collect(),
        _ => indices.to_vec(),
    }
}

pub fn checkpoint_dir(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("iter-{iteration:07}"))
}

/// Checkpoint directories of a run, in iteration order.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = run_dir.join("checkpoints");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no checkpoints", dir.display())));
    }
    Ok(out)
}

/// Endless epoch-shuffled stream of training indices; the incomplete tail
/// of each epoch is dropped.
struct BatchStream {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn next(&mut self, b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.pos + b > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        out
    }
}

#[derive(Serialize)]
struct NanDump<'a> {
    iteration: u64,
    loss: [f64; 3],
    sample_indices: &'a [usize],
    shifts: &'a [i32],
    partners: &'a [usize],
    predictions: Vec<Option<[f32; 2]>>,
}

fn params_finite(p: &MoNetParams<f32>) -> bool {
    let mut ok = true;
    p.visit("", &mut |_, t| ok &= t.data().iter().all(|v| v.is_finite()));
    ok
}

fn check_inputs(data: &TrainData<'_>, cfg: &RunConfig) -> Result<()> {
    if data.train.len() < cfg.train.batch_size {
        return Err(Error::InvalidInput(format!(
            "training split has {} samples, fewer than batch size {}",
            data.train.len(),
            cfg.train.batch_size
        )));
    }
    if data.validation.is_empty() {
        return Err(Error::InvalidInput("validation split is empty".into()));
    }
    let s = &data.samples[data.train[0]].observation;
    if s.image_h != cfg.network.image_size || s.map_size != cfg.network.map_size {
        return Err(Error::Shape(format!(
            "dataset has {}px images and {}px maps, network expects {} and {}",
            s.image_h, s.map_size, cfg.network.image_size, cfg.network.map_size
        )));
    }
    if let Some(&i) = data.train.iter().chain(data.validation).find(|&&i| i >= data.samples.len()) {
        return Err(Error::InvalidInput(format!("split index {i} out of range")));
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains a policy with Adam on mini-batches of augmented samples.
///
/// With `out` set, writes `config.json`, `metrics.csv` and checkpoints
/// every `checkpoint_every` iterations (plus iteration 0 and the last).
/// A non-finite loss or parameter aborts the run with a dump of the batch.
pub fn train(data: TrainData<'_>, config: RunConfig, out: Option<&Path>) -> Result<TrainReport> {
    let cfg = config.resolved();
    cfg.validate()?;
    check_inputs(&data, &cfg)?;
    let tc = &cfg.train;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        let json = serde_json::to_string_pretty(&cfg).map_err(|e| Error::json(&path, e))?;
        write_file(&path, json)?;
    }

    let mut params: MoNetParams<f32> = init_params(tc.seed, cfg.variant, &cfg.network)?;
    let OptimizerConfig::Adam(adam_cfg) = tc.optimizer;
    let mut adam = Adam::new(adam_cfg, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let mut stream = BatchStream {
        pool: data.train.to_vec(),
        order: Vec::new(),
        pos: usize::MAX / 2,
    };
    let val_idx = strided(data.validation, tc.validation_cap);
    let lr_meta = serde_json::to_value(tc.schedule).unwrap_or_default();

    let mut checkpoints = Vec::new();
    let mut save = |params: &MoNetParams<f32>, it: u64, metrics: &[MetricsRow]| -> Result<()> {
        if let Some(dir) = out {
            let cdir = checkpoint_dir(dir, it);
            let extra = serde_json::json!({
                "learning_rate": tc.learning_rate,
                "schedule": lr_meta,
                "validation_l1": metrics.last().and_then(|r| r.validation_l1),
            });
            save_checkpoint(&cdir, params, tc.seed, it, extra)?;
            checkpoints.push(cdir);
            write_file(&dir.join("metrics.csv"), metrics_csv(metrics))?;
        }
        Ok(())
    };

    let mut metrics = vec![MetricsRow {
        iteration: 0,
        train_imitation: None,
        train_lgc: None,
        validation_l1: Some(mean_imitation_loss(&params, data.samples, &val_idx, cfg.loss.lambda_tau)?),
        lr: tc.schedule.rate(tc.learning_rate, 0),
    }];
    save(&params, 0, &metrics)?;

    for it in 1..=tc.total_iterations {
        let idx = stream.next(tc.batch_size, &mut rng);
        let shifts: Vec<i32> = idx
            .iter()
            .map(|_| rng.gen_range(-tc.augment.max_shift..=tc.augment.max_shift))
            .collect();
        let pairing = pair_batch(tc.batch_size, &mut rng)?;
        let augmented: Vec<(Observation, crate::simworld::Action)> = idx
            .par_iter()
            .zip(&shifts)
            .map(|(&i, &s)| augment_observation(&data.samples[i].observation, data.samples[i].action, s, &tc.augment))
            .collect::<Result<_>>()?;
        let batch: Vec<BatchItem<'_>> = augmented
            .iter()
            .map(|(o, a)| BatchItem {
                observation: o,
                action: *a,
            })
            .collect();
        let (loss, grads): (LossBreakdown, _) =
            loss_and_gradients(&batch, &pairing, &params, &cfg.loss, LossTerms::All)?;
        let lr = tc.schedule.rate(tc.learning_rate, it - 1);

        if !loss.total.is_finite() || !params_finite(&grads) {
            let predictions = batch
                .iter()
                .map(|b| policy_forward::<f32>(b.observation, &params).ok().map(|o| o.action))
                .collect();
            let dump = NanDump {
                iteration: it,
                loss: [loss.total, loss.imitation, loss.lgc],
                sample_indices: &idx,
                shifts: &shifts,
                partners: pairing.partners(),
                predictions,
            };
            let mut msg = format!("non-finite loss or gradient at iteration {it} (loss {})", loss.total);
            if let Some(dir) = out {
                let path = dir.join("nan_dump.json");
                if let Ok(json) = serde_json::to_string_pretty(&dump) {
                    write_file(&path, json)?;
                    let _ = write!(msg, "; batch dumped to {}", path.display());
                }
            }
            return Err(Error::Numerical(msg));
        }

        adam.update(&mut params, &grads, lr);
        if !params_finite(&params) {
            return Err(Error::Numerical(format!("parameters became non-finite at iteration {it}")));
        }
        metrics.push(MetricsRow {
            iteration: it,
            train_imitation: Some(loss.imitation),
            train_lgc: Some(loss.lgc),
            validation_l1: None,
            lr,
        });
        if it % tc.checkpoint_every == 0 || it == tc.total_iterations {
            let v = mean_imitation_loss(&params, data.samples, &val_idx, cfg.loss.lambda_tau)?;
            metrics.last_mut().unwrap().validation_l1 = Some(v);
            save(&params, it, &metrics)?;
        }
        log::debug!("iter {it}: L_pi {:.4} L_lgc {:.4} lr {lr:.3e}", loss.imitation, loss.lgc);
    }
    drop(save);
    Ok(TrainReport {
        params,
        config: cfg,
        metrics,
        checkpoints,
    })
}
