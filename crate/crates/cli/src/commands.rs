use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use monet::eval::{
    curve_csv, decision_rsm, entropy_transition_report, learning_curve, rollout, success_table, CurveRow,
    EntropyReport, RolloutResult, SuccessTable,
};
use monet::interpret::{build_decoder, cap_per_class, collect_decisions, saliency_from_attention, DecoderModel};
use monet::network::{checkpoint_hash, load_checkpoint, policy_forward};
use monet::simworld::{generate_dataset, generate_world, Dataset, Outcome};
use monet::training::{train, TrainData, METRICS_HEADER};
use monet::ModelVariant;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::plot::{self, Series, PALETTE};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).expect("serializable");
    write(path, json + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| monet::Error::json(path, e).into())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let manifest = generate_dataset(&cfg.dataset_config(), out)?;
    cfg.write(out)?;
    info!(
        "{} samples from {} episodes written to {}",
        manifest.sample_count,
        manifest.episodes.len(),
        out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> CliResult<()> {
    let ds = Dataset::load(dataset)?;
    cfg.write(out)?;
    let run = cfg.run_config();
    info!(
        "training {} for {} iterations on {} samples",
        run.variant,
        run.train.total_iterations,
        ds.train.len()
    );
    let report = train(TrainData::from(&ds), run, Some(out))?;
    if let Some((it, v)) = report.validation_curve().last() {
        info!("iteration {it}: validation L1 {v:.5}");
    }
    Ok(())
}

#[derive(Serialize)]
struct DecoderSummary {
    classes: Vec<String>,
    samples_per_class: Vec<usize>,
    validation_samples: usize,
    validation_accuracy: Option<f64>,
}

/// Accuracy of `model` on the capped validation split of `ds`.
fn held_out_accuracy(model: &DecoderModel, params: &monet::MoNet32, ds: &Dataset, cap: Option<usize>) -> CliResult<(usize, Option<f64>)> {
    let kept = cap_per_class(&ds.samples, &ds.validation, cap, model.merge_si);
    if kept.is_empty() {
        return Ok((0, None));
    }
    let features = collect_decisions(params, &ds.samples, &kept)?;
    let mut correct = 0usize;
    for (f, &i) in features.iter().zip(&kept) {
        let t = ds.samples[i].task_tag();
        let t = if model.merge_si { t.merged() } else { t };
        if model.classify(f)? == t {
            correct += 1;
        }
    }
    Ok((kept.len(), Some(correct as f64 / kept.len() as f64)))
}

pub fn fit_decoder(cfg: &ExperimentConfig, checkpoint: &Path, dataset: &Path, out: &Path) -> CliResult<()> {
    let ds = Dataset::load(dataset)?;
    let model = build_decoder(checkpoint, &ds.samples, &ds.train, &cfg.decoder)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(out, &model)?;
    let (params, _) = load_checkpoint::<f32>(checkpoint)?;
    let (n, accuracy) = held_out_accuracy(&model, &params, &ds, cfg.decoder.per_class_cap)?;
    let summary = DecoderSummary {
        classes: model.classes.iter().map(|c| c.name().to_string()).collect(),
        samples_per_class: model.meta.samples_per_class.clone(),
        validation_samples: n,
        validation_accuracy: accuracy,
    };
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

#[derive(Default)]
pub struct EvalRequest {
    pub rsm: bool,
    pub curve: bool,
    pub rollout: bool,
    pub saliency: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub run: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: u64,
    pub world_seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
pub struct SuccessReport {
    pub success_rate: f64,
    pub table: SuccessTable,
    pub episodes: Vec<EpisodeSummary>,
    pub entropy: Option<EntropyReport>,
}

#[derive(Serialize, Deserialize)]
pub struct SaliencyExport {
    pub sample: usize,
    pub grid: [usize; 2],
    pub target: [usize; 2],
    pub dtype: String,
    pub blob: String,
    pub sum: f64,
    pub mean_attention: Vec<f64>,
}

fn need_dataset(req: &EvalRequest, what: &str) -> CliResult<Dataset> {
    let path = req
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{what} needs --dataset")))?;
    Ok(Dataset::load(path)?)
}

/// `run/checkpoints/iter-N` → `run`.
fn run_dir_of(checkpoint: &Path) -> Option<PathBuf> {
    let parent = checkpoint.parent()?;
    (parent.file_name()? == "checkpoints").then(|| parent.parent().map(Path::to_path_buf)).flatten()
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, req: &EvalRequest) -> CliResult<()> {
    if !(req.rsm || req.curve || req.rollout || req.saliency.is_some()) {
        return Err(CliError::Usage("nothing to evaluate: pass --rsm, --curve, --rollout or --saliency".into()));
    }
    let (params, _) = load_checkpoint::<f32>(checkpoint)?;
    create_dir(out)?;
    cfg.write(out)?;
    let dataset = if req.rsm || req.curve || req.saliency.is_some() {
        Some(need_dataset(req, "this evaluation")?)
    } else {
        req.dataset.as_deref().map(Dataset::load).transpose()?
    };

    if req.rsm {
        let ds = dataset.as_ref().expect("loaded above");
        let rsm = decision_rsm(&params, &ds.samples, &ds.validation, &cfg.eval.decisions)?;
        info!("similarity score {:.4}", rsm.similarity_score);
        write_json(&out.join("rsm.json"), &rsm)?;
        plot::save(&plot::heatmap(&rsm.normalized, 48), &out.join("rsm.png"))?;
    }

    if req.curve {
        let ds = dataset.as_ref().expect("loaded above");
        let run = req
            .run
            .clone()
            .or_else(|| run_dir_of(checkpoint))
            .ok_or_else(|| CliError::Usage("--curve needs --run or a checkpoint inside run/checkpoints".into()))?;
        let rows = learning_curve(&run, &ds.samples, &ds.validation, &cfg.eval.decisions)?;
        write(&out.join("curve.csv"), curve_csv(&rows))?;
        plot::save(&curve_plot(&rows), &out.join("curve.png"))?;
    }

    if let Some(idx) = req.saliency {
        let ds = dataset.as_ref().expect("loaded above");
        let sample = ds
            .samples
            .get(idx)
            .ok_or_else(|| CliError::Usage(format!("sample {idx} out of range ({} samples)", ds.len())))?;
        let o = &sample.observation;
        let fwd = policy_forward::<f32>(o, &params)?;
        let a: Vec<f64> = fwd.attention.iter().map(|&v| v as f64).collect();
        let g = params.config.grid;
        let map = saliency_from_attention(&a, g, g, (o.image_h, o.image_w))?;
        let blob = format!("saliency_{idx}.f64");
        let bytes: Vec<u8> = map.mean_attention.iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&out.join(&blob), bytes)?;
        let export = SaliencyExport {
            sample: idx,
            grid: [g, g],
            target: [o.image_h, o.image_w],
            dtype: "float64-le".into(),
            blob,
            sum: map.mean_attention.iter().sum(),
            mean_attention: map.mean_attention.clone(),
        };
        write_json(&out.join(format!("saliency_{idx}.json")), &export)?;
        let img = plot::saliency_overlay(&o.image, o.image_h, o.image_w, &map.upscaled);
        plot::save(&img, &out.join(format!("saliency_{idx}.png")))?;
    }

    if req.rollout {
        let decoder: Option<DecoderModel> = match (&req.decoder, &dataset) {
            (Some(path), _) => {
                let d: DecoderModel = read_json(path)?;
                d.validate()?;
                let hash = checkpoint_hash(checkpoint)?;
                if d.meta.checkpoint_hash.as_deref().is_some_and(|h| h != hash) {
                    warn!("decoder {} was fitted on a different checkpoint", path.display());
                }
                Some(d)
            }
            (None, Some(ds)) if params.variant.has_latent_decision() => {
                Some(build_decoder(checkpoint, &ds.samples, &ds.train, &cfg.decoder)?)
            }
            _ => None,
        };
        let results = rollouts(cfg, &params, decoder.as_ref())?;
        for r in &results {
            write_rollout(&out.join(format!("rollout_{}.jsonl", r.episode_id)), r)?;
        }
        let table = success_table(&results);
        let entropy = decoder
            .as_ref()
            .map(|_| entropy_transition_report(&results, cfg.eval.entropy_window));
        let report = SuccessReport {
            success_rate: table.success_rate(),
            table,
            episodes: results
                .iter()
                .map(|r| EpisodeSummary {
                    episode_id: r.episode_id,
                    world_seed: r.world_seed,
                    outcome: r.outcome,
                    steps: r.steps.len(),
                })
                .collect(),
            entropy,
        };
        info!(
            "{} episodes, success rate {:.3}",
            report.episodes.len(),
            report.success_rate
        );
        write_json(&out.join("success.json"), &report)?;
        if decoder.is_some() {
            plot::save(&entropy_plot(&results), &out.join("entropy.png"))?;
        }
    }
    Ok(())
}

/// Closed-loop episodes on held-out worlds, one per seed.
pub fn rollouts(
    cfg: &ExperimentConfig,
    params: &monet::MoNet32,
    decoder: Option<&DecoderModel>,
) -> CliResult<Vec<RolloutResult>> {
    let profile = cfg.eval_world_profile();
    let sim = monet::simworld::SimConfig {
        world: profile.clone(),
        ..cfg.sim.clone()
    };
    (0..cfg.eval.episodes as u64)
        .into_par_iter()
        .map(|k| {
            let world = generate_world(cfg.eval.world_seed_base + k, &profile)?;
            let route = world.default_route();
            Ok(rollout(&world, &route, params, decoder, &sim, None, k)?)
        })
        .collect()
}

fn write_rollout(path: &Path, r: &RolloutResult) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &r.steps {
        serde_json::to_writer(&mut w, s).expect("serializable");
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn curve_plot(rows: &[CurveRow]) -> image::RgbImage {
    let s = Series {
        points: rows.iter().map(|r| (r.iteration as f64, r.similarity_score)).collect(),
        color: PALETTE[0],
    };
    plot::line_plot(&[s], 480, 320)
}

fn entropy_plot(results: &[RolloutResult]) -> image::RgbImage {
    let series: Vec<Series> = results
        .iter()
        .take(PALETTE.len())
        .enumerate()
        .map(|(k, r)| Series {
            points: r
                .steps
                .iter()
                .filter_map(|s| s.decoded.as_ref().map(|d| (s.step as f64, d.entropy)))
                .collect(),
            color: PALETTE[k],
        })
        .collect();
    plot::line_plot(&series, 640, 320)
}

struct MetricsTable {
    iteration: Vec<f64>,
    train_imitation: Vec<Option<f64>>,
    validation_l1: Vec<Option<f64>>,
}

fn parse_metrics(path: &Path) -> CliResult<MetricsTable> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(monet::Error::InvalidInput(format!("{}: unexpected header", path.display())).into());
    }
    let mut t = MetricsTable {
        iteration: Vec::new(),
        train_imitation: Vec::new(),
        validation_l1: Vec::new(),
    };
    let bad = |k: usize| monet::Error::InvalidInput(format!("{}: malformed row {k}", path.display()));
    for (k, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad(k).into());
        }
        let opt = |s: &str| -> Result<Option<f64>, monet::Error> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(k))
            }
        };
        t.iteration.push(cols[0].parse().map_err(|_| bad(k))?);
        t.train_imitation.push(opt(cols[1])?);
        t.validation_l1.push(opt(cols[3])?);
    }
    Ok(t)
}

fn parse_curve(path: &Path) -> CliResult<Vec<(u64, f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            match (c.first().map(|s| s.parse()), c.get(1).map(|s| s.parse()), c.get(2).map(|s| s.parse())) {
                (Some(Ok(i)), Some(Ok(v)), Some(Ok(s))) => Ok((i, v, s)),
                _ => Err(monet::Error::InvalidInput(format!("{}: malformed row `{l}`", path.display())).into()),
            }
        })
        .collect()
}

fn fmt_row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" | ")
}

/// Markdown summary of a training run and, optionally, an eval directory.
pub fn report(run: &Path, eval_dir: Option<&Path>, out: &Path) -> CliResult<()> {
    create_dir(out)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n\nRun directory: `{}`\n", run.display());
    let cfg_path = run.join("config.json");
    if let Ok(cfg) = read_json::<monet::training::RunConfig>(&cfg_path) {
        let _ = writeln!(
            md,
            "Variant `{}`, {} iterations, batch {}, lr {}, λ_LGC {}, κ {}, seed {}.\n",
            cfg.variant,
            cfg.train.total_iterations,
            cfg.train.batch_size,
            cfg.train.learning_rate,
            cfg.loss.lambda_lgc,
            cfg.loss.kappa,
            cfg.train.seed
        );
    }

    let metrics = parse_metrics(&run.join("metrics.csv"))?;
    let train_pts: Vec<(f64, f64)> = metrics
        .iteration
        .iter()
        .zip(&metrics.train_imitation)
        .filter_map(|(&i, v)| v.map(|v| (i, v)))
        .collect();
    let val_pts: Vec<(f64, f64)> = metrics
        .iteration
        .iter()
        .zip(&metrics.validation_l1)
        .filter_map(|(&i, v)| v.map(|v| (i, v)))
        .collect();
    let loss_img = plot::line_plot(
        &[
            Series {
                points: train_pts,
                color: PALETTE[0],
            },
            Series {
                points: val_pts.clone(),
                color: PALETTE[1],
            },
        ],
        640,
        320,
    );
    plot::save(&loss_img, &out.join("loss.png"))?;
    let _ = writeln!(md, "## Training\n\n![imitation loss (blue) and validation L1 (red)](loss.png)\n");
    let _ = writeln!(md, "| iteration | validation L1 |\n|---|---|");
    for (i, v) in &val_pts {
        let _ = writeln!(md, "| {i} | {v:.5} |");
    }
    md.push('\n');

    if let Some(dir) = eval_dir {
        let curve = dir.join("curve.csv");
        if curve.exists() {
            let rows = parse_curve(&curve)?;
            let s = Series {
                points: rows.iter().map(|r| (r.0 as f64, r.2)).collect(),
                color: PALETTE[0],
            };
            plot::save(&plot::line_plot(&[s], 480, 320), &out.join("curve.png"))?;
            let _ = writeln!(md, "## Learning curve\n\n![similarity score](curve.png)\n");
            let _ = writeln!(md, "| iteration | validation L1 | similarity score |\n|---|---|---|");
            for (i, v, s) in rows {
                let _ = writeln!(md, "| {i} | {v:.5} | {s:.4} |");
            }
            md.push('\n');
        }
        let rsm = dir.join("rsm.json");
        if rsm.exists() {
            let r: monet::eval::Rsm = read_json(&rsm)?;
            plot::save(&plot::heatmap(&r.normalized, 48), &out.join("rsm.png"))?;
            let names: Vec<&str> = r.classes.iter().map(|c| c.name()).collect();
            let _ = writeln!(
                md,
                "## Representational similarity\n\nSimilarity score **{:.4}**.\n\n![normalized RSM](rsm.png)\n",
                r.similarity_score
            );
            let _ = writeln!(md, "| | {} |\n|---|{}", names.join(" | "), "---|".repeat(names.len()));
            for (n, row) in names.iter().zip(&r.normalized) {
                let _ = writeln!(md, "| {n} | {} |", fmt_row(row));
            }
            md.push('\n');
        }
        let success = dir.join("success.json");
        if success.exists() {
            let s: SuccessReport = read_json(&success)?;
            let t = &s.table;
            let _ = writeln!(
                md,
                "## Closed loop\n\n{} episodes: {} goals, {} collisions, {} timeouts (success rate {:.3}).\n",
                t.episodes, t.goals, t.collisions, t.timeouts, s.success_rate
            );
            let _ = writeln!(md, "| task | successes | attempts |\n|---|---|---|");
            for (tag, c) in &t.tasks {
                let _ = writeln!(md, "| {} | {} | {} |", tag.name(), c.successes, c.attempts);
            }
            md.push('\n');
            if let Some(e) = &s.entropy {
                let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                let _ = writeln!(
                    md,
                    "Decision entropy: transition windows {}, steady windows {}, difference {} ({} task changes, window ±{}).\n",
                    f(e.transition_mean),
                    f(e.steady_mean),
                    f(e.difference),
                    e.transitions,
                    e.window
                );
                if dir.join("entropy.png").exists() {
                    fs::copy(dir.join("entropy.png"), out.join("entropy.png"))
                        .map_err(|e| CliError::io(dir.join("entropy.png"), e))?;
                    let _ = writeln!(md, "![entropy traces](entropy.png)\n");
                }
            }
        }
    }
    write(&out.join("report.md"), md)
}

pub fn parse_variant(s: &str) -> Result<ModelVariant, String> {
    s.parse().map_err(|e: monet::Error| e.to_string())
}
