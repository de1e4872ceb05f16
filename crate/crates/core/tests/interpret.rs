mod common;

use monet::interpret::*;
use monet::network::{checkpoint_hash, init_params, save_checkpoint, NetworkConfig};
use monet::simworld::{DemoSample, TaskTag};
use monet::ModelVariant;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_row_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut a: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>().powi(3)).collect();
    for row in a.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    a
}

#[test]
fn saliency_of_uniform_attention_is_constant() {
    let a = vec![1.0f64 / 36.0; 36 * 36];
    let s = saliency_from_attention(&a, 6, 6, (96, 96)).unwrap();
    assert!(s.mean_attention.iter().all(|&v| (v - 1.0 / 36.0).abs() < 1e-15));
    assert!(s.upscaled.iter().all(|&v| (v - 1.0 / 36.0).abs() < 1e-15));
    assert_eq!(s.upscaled.len(), 96 * 96);
}

#[test]
fn saliency_mass_is_one_for_random_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let a = random_row_stochastic(&mut rng, 36);
        let s = saliency_from_attention(&a, 6, 6, (24, 24)).unwrap();
        assert!((s.mean_attention.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(s.grid().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn saliency_grid_is_row_major_in_token_order() {
    // Everyone attends to token 1, which is row 0, column 1.
    let n = 4;
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + 1] = 1.0;
    }
    let s = saliency_from_attention(&a, 2, 2, (2, 2)).unwrap();
    assert_eq!(s.upscaled, vec![0.0, 1.0, 0.0, 0.0]);
}

fn clusters(rng: &mut ChaCha8Rng, means: &[[f64; 3]], per: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, m) in means.iter().enumerate() {
        for _ in 0..per {
            x.push(m.iter().map(|c| c + noise.sample(rng)).collect());
            y.push(k);
        }
    }
    (x, y)
}

fn accuracy(svm: &LinearSvm, x: &[Vec<f64>], y: &[usize]) -> f64 {
    x.iter().zip(y).filter(|(xi, &yi)| svm.predict(xi) == yi).count() as f64 / x.len() as f64
}

#[test]
fn svm_separates_two_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = clusters(&mut rng, &[[5.0, 0.0, 0.0], [-5.0, 0.0, 0.0]], 100);
    let svm = fit_svm(&x, &y, 2, 1.0).unwrap();
    assert_eq!(accuracy(&svm, &x, &y), 1.0);
}

#[test]
fn svm_separates_four_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let means = [[8.0, 0.0, 0.0], [-8.0, 0.0, 0.0], [0.0, 8.0, 0.0], [0.0, -8.0, 0.0]];
    let (x, y) = clusters(&mut rng, &means, 100);
    let svm = fit_svm(&x, &y, 4, 1.0).unwrap();
    assert_eq!(accuracy(&svm, &x, &y), 1.0);
}

#[test]
fn svm_is_invariant_to_duplicating_the_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = clusters(&mut rng, &[[1.0, 0.5, 0.0], [-1.0, 0.0, 0.5]], 50);
    let a = fit_svm(&x, &y, 2, 0.7).unwrap();
    let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
    let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
    let b = fit_svm(&x2, &y2, 2, 0.7).unwrap();
    for (wa, wb) in a.weights.iter().flatten().zip(b.weights.iter().flatten()) {
        assert!((wa - wb).abs() < 1e-6);
    }
    for (ba, bb) in a.biases.iter().zip(&b.biases) {
        assert!((ba - bb).abs() < 1e-6);
    }
}

#[test]
fn vanishing_regularization_weight_shrinks_w() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut x, y) = clusters(&mut rng, &[[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]], 50);
    let mean: Vec<f64> = (0..3).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / x.len() as f64).collect();
    x.iter_mut().for_each(|r| r.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m));
    let svm = fit_svm(&x, &y, 2, 1e-9).unwrap();
    for w in &svm.weights {
        assert!(w.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }
}

#[test]
fn svm_rejects_bad_inputs() {
    let x = vec![vec![0.0, f64::NAN], vec![1.0, 0.0]];
    assert!(fit_svm(&x, &[0, 1], 2, 1.0).is_err());
    let x = vec![vec![0.0], vec![1.0], vec![2.0]];
    assert!(fit_svm(&x, &[0, 0, 0], 2, 1.0).is_err());
}

#[test]
fn calibration_recovers_generating_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..50_000 {
        let f: f64 = rng.gen_range(-3.0..3.0);
        let p = 1.0 / (1.0 + (-2.0 * f).exp());
        scores.push(f);
        labels.push(rng.gen::<f64>() < p);
    }
    let (e, f) = fit_calibration(&scores, &labels).unwrap();
    assert!((e + 2.0).abs() < 0.1, "E = {e}");
    assert!(f.abs() < 0.1, "F = {f}");
}

#[test]
fn calibration_of_separated_scores_stays_finite() {
    let scores: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 - i as f64 } else { 1.0 + i as f64 }).collect();
    let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
    let (e, f) = fit_calibration(&scores, &labels).unwrap();
    assert!(e.is_finite() && f.is_finite());
    for s in [-100.0, 0.0, 100.0] {
        let p = 1.0 / (1.0 + (e * s + f).exp());
        assert!(p > 0.0 && p < 1.0);
    }
}

fn model(weights: Vec<Vec<f64>>, biases: Vec<f64>, e: Vec<f64>, f: Vec<f64>) -> DecoderModel {
    DecoderModel {
        classes: TaskTag::MERGED.to_vec(),
        weights,
        biases,
        calib_e: e,
        calib_f: f,
        c: 1.0,
        merge_si: true,
        meta: DecoderMeta {
            checkpoint_hash: None,
            fold_seed: 0,
            folds: 3,
            samples_per_class: vec![1; 4],
        },
    }
}

#[test]
fn zero_calibration_gives_one_half() {
    let m = model(vec![vec![1.0, -2.0]; 4], vec![0.3; 4], vec![0.0; 4], vec![0.0; 4]);
    let d = m.decode(&[0.7f64, 1.1]).unwrap();
    assert!(d.probabilities.iter().all(|&p| p == 0.5));
    assert!((d.entropy - 4f64.ln()).abs() < 1e-4);
}

#[test]
fn confident_decoder_has_low_entropy() {
    let m = model(
        vec![vec![1.0], vec![-1.0], vec![-1.0], vec![-1.0]],
        vec![0.0; 4],
        vec![-50.0; 4],
        vec![0.0; 4],
    );
    let d = m.decode(&[1.0f64]).unwrap();
    assert!(d.entropy < 1e-6);
    assert_eq!(m.classify(&[1.0f64]).unwrap(), TaskTag::ST);
    assert!(m.decode(&[1.0f64, 2.0]).is_err());
}

proptest! {
    #[test]
    fn decoded_distribution_contracts(
        w in prop::collection::vec(-3.0f64..3.0, 12),
        b in prop::collection::vec(-2.0f64..2.0, 4),
        e in prop::collection::vec(-5.0f64..5.0, 4),
        f in prop::collection::vec(-2.0f64..2.0, 4),
        h in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let m = model(w.chunks(3).map(|c| c.to_vec()).collect(), b, e, f);
        let d = m.decode(&h).unwrap();
        prop_assert!((d.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.probabilities.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!(d.entropy >= 0.0 && d.entropy <= 4f64.ln() + 1e-12);
    }

    #[test]
    fn calibration_is_monotone_in_the_score(e in -5.0f64..5.0, f in -2.0f64..2.0, s in -5.0f64..5.0) {
        prop_assume!(e.abs() > 1e-3);
        let m = model(vec![vec![1.0]; 4], vec![0.0; 4], vec![e; 4], vec![f; 4]);
        let p0 = m.decode(&[s]).unwrap().probabilities[0];
        let p1 = m.decode(&[s + 0.5]).unwrap().probabilities[0];
        let increasing = if e < 0.0 { p1 > p0 } else { p1 < p0 };
        prop_assert!(increasing);
    }

    #[test]
    fn svm_argmax_is_scale_invariant(t in 0.01f64..100.0, x in prop::collection::vec(-5.0f64..5.0, 2)) {
        let svm = LinearSvm {
            weights: vec![vec![1.0, 0.2], vec![-0.5, 1.0], vec![0.3, -1.0]],
            biases: vec![0.1, -0.2, 0.05],
        };
        let scaled = LinearSvm {
            weights: svm.weights.iter().map(|w| w.iter().map(|v| v * t).collect()).collect(),
            biases: svm.biases.iter().map(|b| b * t).collect(),
        };
        prop_assert_eq!(svm.predict(&x), scaled.predict(&x));
    }
}

fn tagged_features(rng: &mut ChaCha8Rng, tags: &[TaskTag], per: usize) -> (Vec<Vec<f64>>, Vec<TaskTag>) {
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, &t) in tags.iter().enumerate() {
        for _ in 0..per {
            let mut v = vec![0.0; 5];
            v[k] = 3.0;
            v.iter_mut().for_each(|c| *c += noise.sample(rng));
            x.push(v);
            y.push(t);
        }
    }
    (x, y)
}

#[test]
fn decoder_merges_straight_classes_by_default() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y) = tagged_features(&mut rng, &TaskTag::ALL, 30);
    let merged = fit_decoder(&x, &y, &DecoderConfig::default()).unwrap();
    assert_eq!(merged.classes, TaskTag::MERGED.to_vec());
    let all = fit_decoder(
        &x,
        &y,
        &DecoderConfig {
            merge_si: false,
            ..DecoderConfig::default()
        },
    )
    .unwrap();
    assert_eq!(all.classes, TaskTag::ALL.to_vec());
    let correct = x.iter().zip(&y).filter(|(xi, &t)| all.classify(xi).unwrap() == t).count();
    assert!(correct as f64 / x.len() as f64 > 0.95);
}

#[test]
fn decoder_lists_absent_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, y) = tagged_features(&mut rng, &[TaskTag::ST, TaskTag::LT], 20);
    match fit_decoder(&x, &y, &DecoderConfig::default()) {
        Err(monet::Error::MissingClasses(c)) => assert_eq!(c, vec!["RT".to_string(), "CA".to_string()]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn building_a_decoder_leaves_the_checkpoint_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig::tiny();
    let p = init_params::<f32>(0, ModelVariant::MoNet, &cfg).unwrap();
    save_checkpoint(dir.path(), &p, 0, 0, serde_json::Value::Null).unwrap();
    let before = checkpoint_hash(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<DemoSample> = (0..60)
        .map(|i| {
            let o = common::random_observation(&mut rng, 16, 16);
            DemoSample::new(o, common::random_action(&mut rng), TaskTag::ALL[i % 5], 0, i as u32)
        })
        .collect();
    let idx: Vec<usize> = (0..samples.len()).collect();
    let m = build_decoder(dir.path(), &samples, &idx, &DecoderConfig::default()).unwrap();
    assert_eq!(m.meta.checkpoint_hash.as_deref(), Some(before.as_str()));
    assert_eq!(checkpoint_hash(dir.path()).unwrap(), before);
    m.validate().unwrap();
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<DecoderModel>(&json).unwrap(), m);
}
