mod common;

use monet::network::{params_hash, NetworkConfig};
use monet::simworld::{generate_dataset, Dataset, DatasetConfig, DemoSample, TaskTag};
use monet::training::*;
use monet::{Error, ModelVariant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dataset(dir: &std::path::Path) -> Dataset {
    let mut cfg = DatasetConfig::desk(0);
    cfg.world_seeds.truncate(5);
    generate_dataset(&cfg, dir).unwrap();
    Dataset::load(dir).unwrap()
}

fn short_run(variant: ModelVariant, seed: u64, iterations: u64) -> RunConfig {
    let mut train = TrainConfig::desk();
    train.batch_size = 16;
    train.total_iterations = iterations;
    train.checkpoint_every = 100;
    train.seed = seed;
    RunConfig {
        variant,
        network: NetworkConfig::desk(),
        train,
        loss: Default::default(),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn short_desk_runs_learn_and_never_read_tags() {
    let data_dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(data_dir.path());
    let run_dir = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let out = (seed == 0).then(|| run_dir.path());
        let report = train(TrainData::from(&ds), short_run(ModelVariant::MoNet, seed, 200), out).unwrap();
        let curve = report.validation_curve();
        assert_eq!(curve.first().unwrap().0, 0);
        assert_eq!(curve.last().unwrap().0, 200);
        assert!(curve.last().unwrap().1 < curve[0].1, "seed {seed}: {curve:?}");

        let imitation: Vec<f64> = report.metrics.iter().filter_map(|r| r.train_imitation).collect();
        assert_eq!(imitation.len(), 200);
        let first = mean(imitation[..20].iter().copied());
        let last = mean(imitation[180..].iter().copied());
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
    assert!(ds.samples.iter().all(|s| s.tag_reads() == 0));

    let dir = run_dir.path();
    let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg, short_run(ModelVariant::MoNet, 0, 200).resolved());
    let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER);
    assert_eq!(lines.count(), 201);
    let its: Vec<u64> = list_checkpoints(dir)
        .unwrap()
        .iter()
        .map(|p| monet::network::read_manifest(p).unwrap().iteration)
        .collect();
    assert_eq!(its, vec![0, 100, 200]);
}

fn tiny_samples(n: usize) -> Vec<DemoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..n)
        .map(|i| {
            let o = common::random_observation(&mut rng, 16, 16);
            DemoSample::new(o, common::random_action(&mut rng), TaskTag::ALL[i % 5], 0, i as u32)
        })
        .collect()
}

fn tiny_run(variant: ModelVariant, iterations: u64) -> RunConfig {
    let mut train = TrainConfig::desk();
    train.batch_size = 8;
    train.total_iterations = iterations;
    train.checkpoint_every = 1000;
    RunConfig {
        variant,
        network: NetworkConfig::tiny(),
        train,
        loss: Default::default(),
    }
}

#[test]
fn ablation_drops_only_the_contrastive_weight() {
    let r = tiny_run(ModelVariant::MoNetNoLgc, 1).resolved();
    assert_eq!(r.loss.lambda_lgc, 0.0);
    assert_eq!(r.loss.lambda_tau, tiny_run(ModelVariant::MoNet, 1).loss.lambda_tau);
    assert!(tiny_run(ModelVariant::MoNet, 1).resolved().loss.lambda_lgc > 0.0);

    let samples = tiny_samples(32);
    let train_idx: Vec<usize> = (0..24).collect();
    let val_idx: Vec<usize> = (24..32).collect();
    let data = || TrainData {
        samples: &samples,
        train: &train_idx,
        validation: &val_idx,
    };
    let a = train(data(), tiny_run(ModelVariant::MoNet, 1), None).unwrap();
    let b = train(data(), tiny_run(ModelVariant::MoNetNoLgc, 1), None).unwrap();
    assert_eq!(a.metrics[1].train_imitation, b.metrics[1].train_imitation);
    assert_eq!(b.metrics[1].train_lgc, Some(0.0));
    assert_eq!(a.metrics[0].validation_l1, b.metrics[0].validation_l1);
}

#[test]
fn training_is_deterministic() {
    let samples = tiny_samples(32);
    let idx: Vec<usize> = (0..32).collect();
    let run = || {
        let data = TrainData {
            samples: &samples,
            train: &idx[..24],
            validation: &idx[24..],
        };
        train(data, tiny_run(ModelVariant::MoNet, 5), None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(params_hash(&a.params), params_hash(&b.params));
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn divergence_aborts_with_a_dump() {
    let samples = tiny_samples(32);
    let idx: Vec<usize> = (0..32).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(ModelVariant::MoNet, 50);
    cfg.train.learning_rate = 1e30;
    cfg.train.schedule = LrSchedule::Constant;
    let data = TrainData {
        samples: &samples,
        train: &idx[..24],
        validation: &idx[24..],
    };
    match train(data, cfg, Some(dir.path())) {
        Err(Error::Numerical(msg)) => {
            assert!(msg.contains("non-finite"), "{msg}");
            if msg.contains("dumped") {
                let dump: serde_json::Value =
                    serde_json::from_str(&std::fs::read_to_string(dir.path().join("nan_dump.json")).unwrap()).unwrap();
                assert_eq!(dump["sample_indices"].as_array().unwrap().len(), 8);
            }
        }
        other => panic!("expected a numerical error, got {:?}", other.map(|r| r.metrics.len())),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let samples = tiny_samples(16);
    let idx: Vec<usize> = (0..16).collect();
    let data = || TrainData {
        samples: &samples,
        train: &idx[..12],
        validation: &idx[12..],
    };
    let mut cfg = tiny_run(ModelVariant::MoNet, 1);
    cfg.train.batch_size = 0;
    assert!(train(data(), cfg, None).is_err());
    let mut cfg = tiny_run(ModelVariant::MoNet, 1);
    cfg.train.learning_rate = -1.0;
    assert!(train(data(), cfg, None).is_err());
    let mut cfg = tiny_run(ModelVariant::MoNet, 1);
    cfg.network = NetworkConfig::desk();
    assert!(train(data(), cfg, None).is_err());
}
