use monet::eval::*;
use monet::interpret::{decision_from_probabilities, DecodedDecision};
use monet::network::{init_params, save_checkpoint, NetworkConfig};
use monet::nn::ParamSet;
use monet::simworld::{generate_world, Action, DemoSample, Observation, Outcome, Pose, SimConfig, TaskTag};
use monet::ModelVariant;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn orthogonal_classes() -> Vec<(Vec<f64>, TaskTag)> {
    let mut d = Vec::new();
    for (k, &t) in TaskTag::MERGED.iter().enumerate() {
        for _ in 0..5 {
            let mut v = vec![0.0; 6];
            v[k] = 2.5;
            d.push((v, t));
        }
    }
    d
}

#[test]
fn orthogonal_classes_score_closed_form() {
    let rsm = compute_rsm(&orthogonal_classes()).unwrap();
    let e = std::f64::consts::E;
    assert!((rsm.similarity_score - 4.0 * e / (e + 3.0)).abs() < 1e-6);
    assert!((rsm.similarity_score - 1.9015).abs() < 1e-4);
    for row in &rsm.normalized {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn collapsed_decisions_score_exactly_one() {
    let d: Vec<(Vec<f64>, TaskTag)> = (0..20).map(|i| (vec![0.5, 0.5, 0.5, 0.5], TaskTag::MERGED[i % 4])).collect();
    let rsm = compute_rsm(&d).unwrap();
    assert_eq!(rsm.similarity_score, 1.0);
    assert!(rsm.normalized.iter().flatten().all(|&v| v == 0.25));
}

#[test]
fn rsm_rejects_empty_classes() {
    let d = orthogonal_classes();
    assert!(compute_rsm_with_classes(&d, &TaskTag::ALL).is_err());
    assert!(compute_rsm(&d[..5]).is_err());
}

#[test]
fn within_class_average_skips_self_pairs() {
    let d = vec![
        (vec![1.0, 0.0], TaskTag::ST),
        (vec![0.0, 1.0], TaskTag::ST),
        (vec![1.0, 1.0], TaskTag::LT),
    ];
    let rsm = compute_rsm(&d).unwrap();
    assert!(rsm.raw[0][0].abs() < 1e-15);
    assert!((rsm.raw[1][1] - 1.0).abs() < 1e-12);
    assert!((rsm.raw[0][1] - 0.5f64.sqrt()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rsm_is_permutation_equivariant_and_scale_free(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<(Vec<f64>, TaskTag)> = (0..24)
            .map(|i| ((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(), TaskTag::MERGED[i % 4]))
            .collect();
        let base = compute_rsm_with_classes(&d, &TaskTag::MERGED).unwrap();
        let perm = [TaskTag::CA, TaskTag::ST, TaskTag::RT, TaskTag::LT];
        let p = compute_rsm_with_classes(&d, &perm).unwrap();
        prop_assert!((p.similarity_score - base.similarity_score).abs() < 1e-12);
        let pos = |t: TaskTag| TaskTag::MERGED.iter().position(|&c| c == t).unwrap();
        for (a, &ta) in perm.iter().enumerate() {
            for (b, &tb) in perm.iter().enumerate() {
                prop_assert!((p.raw[a][b] - base.raw[pos(ta)][pos(tb)]).abs() < 1e-12);
            }
        }
        let scaled: Vec<_> = d.iter().map(|(v, t)| (v.iter().map(|x| x * scale).collect(), *t)).collect();
        let s = compute_rsm_with_classes(&scaled, &TaskTag::MERGED).unwrap();
        prop_assert!((s.similarity_score - base.similarity_score).abs() < 1e-12);
        prop_assert!(base.similarity_score > 0.0 && base.similarity_score < 4.0);
    }
}

#[test]
fn task_accounting_examples() {
    let c = task_counts(&[TaskTag::ST; 5], Outcome::Goal);
    assert_eq!(c[&TaskTag::ST], TaskCount { successes: 1, attempts: 1 });

    let tags = [TaskTag::ST, TaskTag::ST, TaskTag::RT, TaskTag::RT];
    let c = task_counts(&tags, Outcome::Collision);
    assert_eq!(c[&TaskTag::ST], TaskCount { successes: 1, attempts: 1 });
    assert_eq!(c[&TaskTag::RT], TaskCount { successes: 0, attempts: 1 });

    let tags = [TaskTag::ST, TaskTag::LT, TaskTag::ST];
    assert_eq!(task_counts(&tags, Outcome::Goal)[&TaskTag::ST].attempts, 2);
}

fn fake_result(tags: &[TaskTag], decoded: impl Fn(usize) -> DecodedDecision) -> RolloutResult {
    RolloutResult {
        episode_id: 0,
        world_seed: 0,
        steps: tags
            .iter()
            .enumerate()
            .map(|(k, &tag)| RolloutStep {
                step: k,
                pose: Pose::new(0.0, 0.0, 0.0),
                action: Action::default(),
                expert: Action::default(),
                tag,
                h_d: None,
                decoded: Some(decoded(k)),
            })
            .collect(),
        outcome: Outcome::Goal,
        tasks: Default::default(),
    }
}

fn tags_with_change(len: usize, at: usize) -> Vec<TaskTag> {
    (0..len).map(|k| if k < at { TaskTag::ST } else { TaskTag::LT }).collect()
}

#[test]
fn constant_distribution_has_no_entropy_gap() {
    let r = fake_result(&tags_with_change(60, 30), |_| decision_from_probabilities(vec![0.0; 4], vec![0.7, 0.2, 0.1, 0.3]));
    let rep = entropy_transition_report(&[r], 10);
    assert_eq!(rep.transitions, 1);
    assert!(rep.difference.unwrap().abs() < 1e-15);
}

#[test]
fn uniform_transitions_and_one_hot_steady_differ_by_ln4() {
    let tags = tags_with_change(60, 30);
    let r = fake_result(&tags, |k| {
        let p = if (20..=40).contains(&k) { vec![0.5; 4] } else { vec![1.0, 0.0, 0.0, 0.0] };
        decision_from_probabilities(vec![0.0; 4], p)
    });
    let rep = entropy_transition_report(&[r], 10);
    assert_eq!(rep.transition_steps, 21);
    assert!((rep.difference.unwrap() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn episodes_without_changes_report_steady_only() {
    let r = fake_result(&[TaskTag::ST; 10], |_| decision_from_probabilities(vec![0.0; 4], vec![0.5; 4]));
    let rep = entropy_transition_report(&[r], 10);
    assert!(rep.transition_mean.is_none() && rep.difference.is_none());
    assert_eq!(rep.steady_steps, 10);
}

#[test]
fn zero_policy_times_out_and_rollouts_are_deterministic() {
    let cfg = SimConfig::desk();
    let world = generate_world(3, &cfg.world).unwrap();
    let route = world.default_route();
    let mut p = init_params::<f32>(0, ModelVariant::MoNet, &NetworkConfig::desk()).unwrap();
    let a = rollout(&world, &route, &p, None, &cfg, Some(150), 1).unwrap();
    let b = rollout(&world, &route, &p, None, &cfg, Some(150), 1).unwrap();
    assert_eq!(a, b);
    p.visit_mut("", &mut |_, t| t.fill(0.0));
    let z = rollout(&world, &route, &p, None, &cfg, None, 2).unwrap();
    assert_eq!(z.outcome, Outcome::Timeout);
    assert!(z.steps.iter().all(|s| s.action == Action::new(0.0, 0.0)));
    let table = success_table(&[a, z]);
    assert_eq!(table.episodes, 2);
    assert!(table.timeouts >= 1);
}

#[test]
fn learning_curve_has_one_row_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig::tiny();
    let p = init_params::<f32>(0, ModelVariant::MoNet, &cfg).unwrap();
    save_checkpoint(&dir.path().join("checkpoints/iter-0000000"), &p, 0, 0, serde_json::Value::Null).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<DemoSample> = (0..20)
        .map(|i| {
            let mut o = Observation::blank(16, 16);
            o.image.iter_mut().for_each(|v| *v = rng.gen());
            DemoSample::new(o, Action::new(0.1, 0.5), TaskTag::MERGED[i % 4], 0, i as u32)
        })
        .collect();
    let idx: Vec<usize> = (0..20).collect();
    let rows = learning_curve(dir.path(), &samples, &idx, &DecisionSetConfig::default()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].iteration, 0);
    assert!(curve_csv(&rows).lines().count() == 2);
    assert!(learning_curve(&dir.path().join("missing"), &samples, &idx, &DecisionSetConfig::default()).is_err());
}
