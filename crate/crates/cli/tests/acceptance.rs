//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! Only the hard contracts fail the test; the desk-scale training floors in
//! [`EMPIRICAL`] are reported.
//!
//! Trains three paired MoNet / MoNet-NoLGC seeds on the desk dataset
//! (2000 iterations each), so a full run takes on the order of an hour on
//! one core.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use monet::eval::{compute_rsm, decision_rsm, entropy_transition_report, rollout, success_table, DecisionSetConfig, RolloutResult};
use monet::interpret::{
    build_decoder_from_params, collect_decisions, decision_from_probabilities, fit_calibration, fit_svm,
    saliency_from_attention, DecoderConfig, DecoderMeta, DecoderModel,
};
use monet::network::{init_params, policy_forward, MoNetParams};
use monet::nn::ParamSet;
use monet::simworld::{
    generate_dataset, generate_world, run_episode, start_pose, Action, Dataset, DatasetConfig, Observation,
    Outcome, SimConfig, TaskTag, WorldProfile, CH_EGO, CH_ROADS, CH_ROUTE, MAP_CHANNELS,
};
use monet::training::{
    cosine_similarity, finite_difference_check, loss_and_gradients, pair_batch, train, BatchItem, BatchPairing,
    LossConfig, LossTerms, RunConfig, TrainConfig, TrainData,
};
use monet::{ModelVariant, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_WORLD_BASE: u64 = 1_000_000;
const EVAL_EPISODES: u64 = 20;
/// Desk-scale training outcomes. They are reported but do not fail the test;
/// every other criterion is a hard contract.
const EMPIRICAL: [usize; 4] = [4, 6, 8, 9];

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, name: &'static str, pass: bool, detail: String) -> Verdict {
    writeln!(std::io::stderr(), "criterion {id} done: {}", if pass { "PASS" } else { "FAIL" }).unwrap();
    Verdict { id, name, pass, detail }
}

fn random_observation(rng: &mut ChaCha8Rng, image: usize, map: usize) -> Observation {
    let mut o = Observation::blank(image, map);
    o.image.iter_mut().for_each(|v| *v = rng.gen());
    for px in o.map.chunks_mut(MAP_CHANNELS) {
        if rng.gen_bool(0.4) {
            px[CH_ROADS] = 1.0;
            if rng.gen_bool(0.5) {
                px[CH_ROUTE] = 1.0;
            }
        }
    }
    let c = map / 2;
    o.map[(c * map + c) * MAP_CHANNELS + CH_EGO] = 1.0;
    o
}

fn random_batch(seed: u64, n: usize, cfg: &NetworkConfig) -> (Vec<Observation>, Vec<Action>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = (0..n).map(|_| random_observation(&mut rng, cfg.image_size, cfg.map_size)).collect();
    let acts = (0..n)
        .map(|_| Action::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)))
        .collect();
    (obs, acts)
}

fn items<'a>(obs: &'a [Observation], acts: &[Action]) -> Vec<BatchItem<'a>> {
    obs.iter()
        .zip(acts)
        .map(|(observation, &action)| BatchItem { observation, action })
        .collect()
}

fn gradient_correctness() -> Verdict {
    let t0 = Instant::now();
    let cfg = NetworkConfig::tiny();
    let (obs, acts) = random_batch(11, 4, &cfg);
    let batch = items(&obs, &acts);
    let pairing = BatchPairing::from_partners(vec![1, 2, 3, 0]).unwrap();
    let mut params: MoNetParams<f64> = init_params(3, ModelVariant::MoNet, &cfg).unwrap();
    // Zero conv biases sit on the ReLU kink for blank map patches; check at a
    // nearby generic point instead.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    params.visit_mut("", &mut |_, t| {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.01..0.01))
    });
    // κ between the two middle pair similarities exercises both gate branches.
    let zs: Vec<Vec<f64>> = obs.iter().map(|o| policy_forward(o, &params).unwrap().z_p).collect();
    let mut c: Vec<f64> = (0..4).map(|i| cosine_similarity(&zs[i], &zs[pairing.partner(i)])).collect();
    c.sort_by(f64::total_cmp);
    let loss = LossConfig {
        lambda_tau: 0.5,
        kappa: (c[1] + c[2]) / 2.0,
        lambda_lgc: 0.7,
    };
    let r = finite_difference_check(&batch, &pairing, &params, &loss, 1e-5, 1e-5).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        r.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "max rel error {:.2e} over {} params (< 1e-4), {secs:.1} s (< 60 s)",
            r.max_rel_error, r.checked
        ),
    )
}

fn routing_contract() -> Verdict {
    let cfg = NetworkConfig::tiny();
    let loss = LossConfig {
        kappa: 0.0,
        lambda_lgc: 1.0,
        ..Default::default()
    };
    let mut nonzero = 0usize;
    let mut checked = 0usize;
    for seed in 0..10 {
        let (obs, acts) = random_batch(200 + seed, 6, &cfg);
        let batch = items(&obs, &acts);
        let pairing = pair_batch(6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let params: MoNetParams<f64> = init_params(seed, ModelVariant::MoNet, &cfg).unwrap();
        let (_, g) = loss_and_gradients(&batch, &pairing, &params, &loss, LossTerms::LgcOnly).unwrap();
        for (_, t) in g.control.named_tensors() {
            checked += t.data().len();
            nonzero += t.data().iter().filter(|v| v.to_bits() != 0).count();
        }
    }
    verdict(
        2,
        "routing contract",
        nonzero == 0,
        format!("{nonzero} of {checked} control gradient entries non-zero over 10 batches (must be 0)"),
    )
}

fn attention_normalization() -> Verdict {
    let cfg = NetworkConfig::desk();
    let params: MoNetParams<f64> = init_params(0, ModelVariant::MoNet, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = cfg.tokens();
    let (mut row_err, mut sal_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let o = random_observation(&mut rng, cfg.image_size, cfg.map_size);
        let a = policy_forward(&o, &params).unwrap().attention;
        for row in a.chunks(n) {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let s = saliency_from_attention(&a, cfg.grid, cfg.grid, (cfg.image_size, cfg.image_size)).unwrap();
        sal_err = sal_err.max((s.mean_attention.iter().sum::<f64>() - 1.0).abs());
    }
    verdict(
        3,
        "attention/saliency normalization",
        row_err <= 1e-6 && sal_err <= 1e-6,
        format!("max |row sum - 1| {row_err:.1e}, max |sum Ā - 1| {sal_err:.1e} over 1000 inputs (<= 1e-6)"),
    )
}

fn rsm_oracle() -> Verdict {
    let mut ortho = Vec::new();
    let mut collapsed = Vec::new();
    for (k, &t) in TaskTag::MERGED.iter().enumerate() {
        for _ in 0..6 {
            let mut v = vec![0.0; 8];
            v[k] = 1.5;
            ortho.push((v, t));
            collapsed.push((vec![2.0, 0.0, 0.0, 0.0], t));
        }
    }
    let e = std::f64::consts::E;
    let a = compute_rsm(&ortho).unwrap().similarity_score;
    let b = compute_rsm(&collapsed).unwrap().similarity_score;
    let want = 4.0 * e / (e + 3.0);
    verdict(
        5,
        "RSM oracle",
        (a - want).abs() <= 1e-6 && b == 1.0,
        format!("orthogonal {a:.7} (want {want:.7} ± 1e-6), collapsed {b} (want exactly 1)"),
    )
}

struct Trained {
    seed: u64,
    monet: MoNetParams<f32>,
    monet_score: f64,
    nolgc_score: f64,
}

fn desk_run(variant: ModelVariant, seed: u64) -> RunConfig {
    RunConfig {
        variant,
        network: NetworkConfig::desk(),
        train: TrainConfig {
            seed,
            ..TrainConfig::desk()
        },
        loss: LossConfig::desk(),
    }
}

fn train_all(ds: &Dataset) -> (Vec<Trained>, f64) {
    let t0 = Instant::now();
    let rsm_cfg = DecisionSetConfig::default();
    let mut out = Vec::new();
    for seed in SEEDS {
        let mut scores = Vec::new();
        let mut kept = None;
        for variant in [ModelVariant::MoNet, ModelVariant::MoNetNoLgc] {
            let report = train(TrainData::from(ds), desk_run(variant, seed), None).unwrap();
            let rsm = decision_rsm(&report.params, &ds.samples, &ds.validation, &rsm_cfg).unwrap();
            let val = report.validation_curve().last().map(|v| v.1).unwrap_or(f64::NAN);
            writeln!(
                std::io::stderr(),
                "seed {seed} {variant}: similarity {:.4}, validation L1 {val:.4}, {:.0} s elapsed",
                rsm.similarity_score,
                t0.elapsed().as_secs_f64()
            )
            .unwrap();
            scores.push(rsm.similarity_score);
            if variant == ModelVariant::MoNet {
                kept = Some(report.params);
            }
        }
        out.push(Trained {
            seed,
            monet: kept.unwrap(),
            monet_score: scores[0],
            nolgc_score: scores[1],
        });
    }
    (out, t0.elapsed().as_secs_f64())
}

fn lgc_ablation(runs: &[Trained], secs: f64) -> Verdict {
    let mut pass = secs <= 7200.0;
    let mut parts = Vec::new();
    for r in runs {
        let ok = r.monet_score >= 1.25 && r.monet_score - r.nolgc_score >= 0.2 && (r.nolgc_score - 1.0).abs() <= 0.15;
        pass &= ok;
        parts.push(format!("seed {} MoNet {:.3} NoLGC {:.3}", r.seed, r.monet_score, r.nolgc_score));
    }
    verdict(
        4,
        "LGC ablation",
        pass,
        format!(
            "{}; per seed MoNet >= 1.25, gap >= 0.2, NoLGC in 1 ± 0.15; training {:.0} s (<= 7200 s)",
            parts.join(", "),
            secs
        ),
    )
}

fn platt_recovery() -> (bool, String) {
    // Stratified synthetic set: 100 score levels on [-3, 3], each with 100
    // labels whose positive fraction matches P = 1/(1 + exp(-2 f)).
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for k in 0..100 {
        let f = -3.0 + 6.0 * (k as f64 + 0.5) / 100.0;
        let p = 1.0 / (1.0 + (-2.0 * f).exp());
        let pos = (p * 100.0).round() as usize;
        for j in 0..100 {
            scores.push(f);
            labels.push(j < pos);
        }
    }
    let (e, f) = fit_calibration(&scores, &labels).unwrap();
    ((e + 2.0).abs() <= 0.1 && f.abs() <= 0.1, format!("Platt E {e:.3} F {f:.3} on 10k scores"))
}

fn separable_svm() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let centres = [[6.0, 0.0], [-6.0, 0.0], [0.0, 6.0], [0.0, -6.0]];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..100 {
            x.push(vec![c[0] + rng.gen_range(-1.5..1.5), c[1] + rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0)]);
            y.push(k);
        }
    }
    let svm = fit_svm(&x, &y, 4, 1.0).unwrap();
    let acc = x.iter().zip(&y).filter(|(xi, &yi)| svm.predict(xi) == yi).count() as f64 / x.len() as f64;
    (acc == 1.0, format!("4-cluster SVM training accuracy {acc:.3}"))
}

fn held_out(decoder: &DecoderModel, params: &MoNetParams<f32>, ds: &Dataset) -> (Vec<Vec<f64>>, f64) {
    let feats = collect_decisions(params, &ds.samples, &ds.validation).unwrap();
    let correct = feats
        .iter()
        .zip(&ds.validation)
        .filter(|(f, &i)| decoder.classify(f).unwrap() == ds.samples[i].task_tag().merged())
        .count();
    let acc = correct as f64 / feats.len() as f64;
    (feats, acc)
}

fn decoded_contracts(decoder: &DecoderModel, feats: &[Vec<f64>]) -> Verdict {
    let (mut sum_err, mut h_lo, mut h_hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for f in feats {
        let d = decoder.decode(f).unwrap();
        sum_err = sum_err.max((d.normalized.iter().sum::<f64>() - 1.0).abs());
        h_lo = h_lo.min(d.entropy);
        h_hi = h_hi.max(d.entropy);
    }
    let flat = DecoderModel {
        classes: TaskTag::MERGED.to_vec(),
        weights: vec![vec![0.0; decoder.latent_dim()]; 4],
        biases: vec![0.0; 4],
        calib_e: vec![0.0; 4],
        calib_f: vec![0.0; 4],
        c: 1.0,
        merge_si: true,
        meta: DecoderMeta {
            checkpoint_hash: None,
            fold_seed: 0,
            folds: 3,
            samples_per_class: vec![1; 4],
        },
    };
    let uniform = flat.decode(&feats[0]).unwrap().entropy;
    let direct = decision_from_probabilities(vec![0.0; 4], vec![0.3; 4]).entropy;
    let ln4 = 4f64.ln();
    let pass = sum_err <= 1e-9 && h_lo >= 0.0 && h_hi <= ln4 + 1e-12 && (uniform - 1.3863).abs() <= 1e-4 && (direct - 1.3863).abs() <= 1e-4;
    verdict(
        7,
        "decoded-decision contracts",
        pass,
        format!(
            "{} decisions: max |sum p̂ - 1| {sum_err:.1e}, H in [{h_lo:.4}, {h_hi:.4}] ⊆ [0, {ln4:.4}]; uniform H {uniform:.5}",
            feats.len()
        ),
    )
}

fn closed_loop(params: &MoNetParams<f32>, decoder: Option<&DecoderModel>, profile: &WorldProfile) -> Vec<RolloutResult> {
    let sim = SimConfig {
        world: profile.clone(),
        ..SimConfig::desk()
    };
    (0..EVAL_EPISODES)
        .map(|k| {
            let world = generate_world(EVAL_WORLD_BASE + k, profile).unwrap();
            rollout(&world, &world.default_route(), params, decoder, &sim, None, k).unwrap()
        })
        .collect()
}

fn expert_success() -> (usize, usize) {
    let sim = SimConfig::desk();
    let mut goals = 0;
    for k in 0..50 {
        let world = generate_world(EVAL_WORLD_BASE + k, &sim.world).unwrap();
        let route = world.default_route();
        let ep = run_episode(&world, &route, start_pose(&world, &route), &sim, false, &mut |ctx| Ok(ctx.expert)).unwrap();
        goals += (ep.outcome == Outcome::Goal) as usize;
    }
    (goals, 50)
}

fn pipeline(dir: &Path, workers: &str) {
    let bin = env!("CARGO_BIN_EXE_monet");
    let data = dir.join("data");
    let run = dir.join("run");
    let steps: [Vec<String>; 3] = [
        vec!["generate-data".into(), "--out".into(), data.display().to_string()],
        vec![
            "train".into(),
            "--dataset".into(),
            data.display().to_string(),
            "--out".into(),
            run.display().to_string(),
            "--iterations".into(),
            "200".into(),
            "--checkpoint-every".into(),
            "100".into(),
        ],
        vec![
            "eval".into(),
            "--checkpoint".into(),
            run.join("checkpoints/iter-0000200").display().to_string(),
            "--dataset".into(),
            data.display().to_string(),
            "--out".into(),
            dir.join("eval").display().to_string(),
            "--rsm".into(),
        ],
    ];
    for args in steps {
        let o = Command::new(bin)
            .args(["--seed", "5", "--workers", workers])
            .args(&args)
            .env_remove("MONET_SEED")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

fn determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "2");
    let same = |rel: &str| fs::read(a.path().join(rel)).unwrap() == fs::read(b.path().join(rel)).unwrap();
    let (m, r) = (same("run/metrics.csv"), same("eval/rsm.json"));
    verdict(
        10,
        "determinism",
        m && r,
        format!("metrics.csv identical: {m}, rsm.json identical: {r} (1 vs 2 workers)"),
    )
}

#[test]
fn acceptance() {
    let mut v = vec![gradient_correctness(), routing_contract(), attention_normalization(), rsm_oracle()];

    let data_dir = tempfile::tempdir().unwrap();
    generate_dataset(&DatasetConfig::desk(0), data_dir.path()).unwrap();
    let ds = Dataset::load(data_dir.path()).unwrap();
    writeln!(std::io::stderr(), "desk dataset: {} samples, {} validation", ds.len(), ds.validation.len()).unwrap();
    let (runs, train_secs) = train_all(&ds);
    v.push(lgc_ablation(&runs, train_secs));

    let decoders: Vec<DecoderModel> = runs
        .iter()
        .map(|r| build_decoder_from_params(&r.monet, &ds.samples, &ds.train, &DecoderConfig::default()).unwrap())
        .collect();
    let (feats, acc) = held_out(&decoders[0], &runs[0].monet, &ds);
    let (platt_ok, platt) = platt_recovery();
    let (svm_ok, svm) = separable_svm();
    v.push(verdict(
        6,
        "decoder recovery",
        platt_ok && svm_ok && acc >= 0.8,
        format!("{platt} (±0.1 of -2, 0); {svm} (want 1); held-out decision accuracy {acc:.3} on {} samples (>= 0.8)", feats.len()),
    ));
    v.push(decoded_contracts(&decoders[0], &feats));

    let desk = WorldProfile::desk();
    let straight = WorldProfile::straight();
    let mut junction_runs = Vec::new();
    let mut straight_runs = Vec::new();
    for (r, d) in runs.iter().zip(&decoders) {
        junction_runs.extend(closed_loop(&r.monet, Some(d), &desk));
        straight_runs.extend(closed_loop(&r.monet, None, &straight));
    }
    let ent = entropy_transition_report(&junction_runs, 10);
    let ent_pass = ent.transitions > 0 && matches!((ent.transition_mean, ent.steady_mean), (Some(t), Some(s)) if t > s);
    v.push(verdict(
        8,
        "entropy transition property",
        ent_pass && junction_runs.len() >= 20,
        format!(
            "{} rollouts, {} task changes: transition mean H {:?} vs steady {:?}",
            junction_runs.len(),
            ent.transitions,
            ent.transition_mean,
            ent.steady_mean
        ),
    ));

    let (eg, en) = expert_success();
    let s_rate = success_table(&straight_runs).success_rate();
    let j_rate = success_table(&junction_runs).success_rate();
    v.push(verdict(
        9,
        "closed-loop sanity",
        eg == en && s_rate >= 0.8 && j_rate >= 0.6,
        format!(
            "expert {eg}/{en}; MoNet straight {s_rate:.3} (>= 0.8) and intersection {j_rate:.3} (>= 0.6) over {} episodes each",
            straight_runs.len()
        ),
    ));

    v.push(determinism());

    v.sort_by_key(|r| r.id);
    // Written to the raw handle so the table shows up even when the test passes.
    let mut err = std::io::stderr();
    writeln!(err, "\nacceptance criteria").unwrap();
    for r in &v {
        let kind = if EMPIRICAL.contains(&r.id) { " (empirical floor)" } else { "" };
        writeln!(err, "[{}] {:>2} {}{kind}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.name, r.detail).unwrap();
    }
    let failed: Vec<usize> = v.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    writeln!(err, "failed criteria: {failed:?}").unwrap();
    let broken: Vec<usize> = failed.into_iter().filter(|id| !EMPIRICAL.contains(id)).collect();
    assert!(broken.is_empty(), "failed contract criteria: {broken:?}");
}

