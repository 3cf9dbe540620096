use std::collections::BTreeMap;

use fedmark::config::ExperimentConfig;
use fedmark::datagen::MultiModalSample;
use fedmark::fl::*;
use fedmark::losses::{random_projection, KdConfig};
use fedmark::nn::DenseNet;
use fedmark::rng::rng_for;
use fedmark::Modality;
use proptest::prelude::*;
use rand::Rng;

fn small_cfg(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.roster.nodes = 3;
    cfg.data.duration_days = 0.5;
    cfg.data.test_per_class = 5;
    cfg.pretrain.epochs = 3;
    cfg.supervised.rounds = 1;
    cfg.unsupervised.rounds = 2;
    cfg.weak.rounds = 2;
    cfg.weak.local_epochs = 1;
    cfg
}

fn pool(cfg: &ExperimentConfig) -> Vec<MultiModalSample> {
    server_pool(cfg, &build_world(cfg).unwrap()).unwrap()
}

fn sup(epochs: usize) -> SupervisedParams {
    SupervisedParams {
        epochs,
        learning_rate: 0.1,
        batch_size: 16,
    }
}

fn unsup(epochs: usize) -> UnsupParams {
    UnsupParams {
        epochs,
        learning_rate: 0.05,
        batch_size: 16,
        temperature: 0.1,
    }
}

fn trained<T>(out: RoundOutput<T>) -> (T, f64) {
    match out {
        RoundOutput::Trained { update, loss } => (update, loss),
        RoundOutput::Skipped { reason } => panic!("skipped: {reason}"),
    }
}

#[test]
fn pretrain_with_zero_epochs_is_the_initialization() {
    let cfg = small_cfg(1);
    let spec = cfg.model_spec();
    let (bundle, loss) = pretrain(&spec, &pool(&cfg), &sup(0), &mut rng_for(9, &[])).unwrap();
    let init = ModelBundle::init(&spec, &mut rng_for(9, &[])).unwrap();
    assert_eq!(loss, None);
    assert_eq!(bundle.flat_params(), init.flat_params());
    assert_eq!(bundle.version, 0);
}

#[test]
fn pretrain_fits_a_separable_pool() {
    let mut cfg = small_cfg(2);
    cfg.classes.truncate(2);
    cfg.data.noise_sigma = 0.3;
    cfg.pretrain.per_class = 20;
    let pool = pool(&cfg);
    let (bundle, _) = pretrain(&cfg.model_spec(), &pool, &sup(50), &mut rng_for(3, &[])).unwrap();
    let preds = predict(&bundle, &pool, &Modality::ALL).unwrap();
    let hits = preds.iter().zip(&pool).filter(|(p, s)| Some(**p) == s.fine_label).count();
    assert!(hits as f64 / pool.len() as f64 >= 0.95, "{hits}/{}", pool.len());
}

#[test]
fn pretrain_rejects_empty_or_partial_pools() {
    let cfg = small_cfg(3);
    let spec = cfg.model_spec();
    assert!(pretrain(&spec, &[], &sup(1), &mut rng_for(0, &[])).is_err());
    let mut p = pool(&cfg);
    p[0].modality_data.remove(&Modality::Audio);
    assert!(pretrain(&spec, &p, &sup(1), &mut rng_for(0, &[])).is_err());
}

fn unlabeled(cfg: &ExperimentConfig) -> Vec<MultiModalSample> {
    let mut p = pool(cfg);
    p.iter_mut().for_each(|s| s.fine_label = None);
    p
}

#[test]
fn unsup_round_zero_epochs_is_identity_and_subset_for_missing_modality() {
    let cfg = small_cfg(4);
    let global = ModelBundle::init(&cfg.model_spec(), &mut rng_for(0, &[])).unwrap();
    let data = unlabeled(&cfg);
    let refs: Vec<&MultiModalSample> = data.iter().collect();
    let proj = random_projection(cfg.model.embed_dim, &mut rng_for(1, &[]));
    let (u, _) = trained(local_unsup_round(7, &refs, &global, &Modality::ALL, &proj, &unsup(0), &mut rng_for(2, &[])).unwrap());
    assert_eq!(u.encoders, global.encoders);

    let live = [Modality::Depth, Modality::Audio];
    let (u, _) = trained(local_unsup_round(7, &refs, &global, &live, &proj, &unsup(1), &mut rng_for(2, &[])).unwrap());
    assert_eq!(u.encoders.keys().copied().collect::<Vec<_>>(), live.to_vec());
    assert_eq!(u.counts[&Modality::Depth], refs.len());
}

#[test]
fn unsup_training_reduces_contrastive_loss() {
    let cfg = small_cfg(5);
    let global = ModelBundle::init(&cfg.model_spec(), &mut rng_for(0, &[])).unwrap();
    let data = unlabeled(&cfg);
    let refs: Vec<&MultiModalSample> = data.iter().collect();
    let proj = random_projection(cfg.model.embed_dim, &mut rng_for(1, &[]));
    let p = unsup(20);
    let before = contrastive_eval(&global.encoders, &refs, &Modality::ALL, &proj, &p, 11).unwrap();
    let (u, _) = trained(local_unsup_round(0, &refs, &global, &Modality::ALL, &proj, &p, &mut rng_for(2, &[])).unwrap());
    let after = contrastive_eval(&u.encoders, &refs, &Modality::ALL, &proj, &p, 11).unwrap();
    assert!(after <= 0.8 * before, "{before} -> {after}");
}

#[test]
fn unsup_round_skips_tiny_nodes() {
    let cfg = small_cfg(6);
    let global = ModelBundle::init(&cfg.model_spec(), &mut rng_for(0, &[])).unwrap();
    let data = unlabeled(&cfg);
    let refs: Vec<&MultiModalSample> = data.iter().take(5).collect();
    let proj = random_projection(cfg.model.embed_dim, &mut rng_for(1, &[]));
    let out = local_unsup_round(0, &refs, &global, &Modality::ALL, &proj, &unsup(1), &mut rng_for(2, &[])).unwrap();
    assert!(matches!(out, RoundOutput::Skipped { .. }));
}

fn weak_setup(seed: u64) -> (ExperimentConfig, ModelBundle, Vec<MultiModalSample>, Vec<TrainUnit>) {
    let cfg = small_cfg(seed);
    let (global, _) = pretrain(&cfg.model_spec(), &pool(&cfg), &sup(3), &mut rng_for(0, &[])).unwrap();
    let stream = pool(&small_cfg(seed + 100));
    let labeled: Vec<usize> = (0..stream.len()).collect();
    let units = labeled.chunks(8).map(|c| TrainUnit::Labeled(c.to_vec())).collect();
    (cfg, global, stream, units)
}

fn weak(epochs: usize, weight: f64) -> WeakParams {
    WeakParams {
        epochs,
        learning_rate: 0.05,
        permutation_budget: 8,
        kd: KdConfig { temperature: 2.0, weight },
        balanced: true,
    }
}

#[test]
fn weak_round_zero_epochs_is_identity() {
    let (cfg, global, stream, units) = weak_setup(7);
    let counts = unit_class_counts(&units, &stream, cfg.classes.len());
    let (u, _) = trained(
        local_weak_round(1, &stream, &units, counts.as_ref(), &global, &Modality::ALL, &weak(0, 0.5), &mut rng_for(0, &[])).unwrap(),
    );
    assert_eq!(u.bundle.flat_params(), global.flat_params());
    assert_eq!(u.samples, stream.len());
}

#[test]
fn kd_only_round_is_a_fixed_point() {
    // λ = 1 and student = teacher: the distillation gradient vanishes.
    let (cfg, global, stream, units) = weak_setup(8);
    let counts = unit_class_counts(&units, &stream, cfg.classes.len());
    let (u, _) = trained(
        local_weak_round(1, &stream, &units, counts.as_ref(), &global, &Modality::ALL, &weak(1, 1.0), &mut rng_for(0, &[])).unwrap(),
    );
    for (a, b) in u.bundle.flat_params().iter().zip(global.flat_params()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn weak_round_without_data_is_skipped() {
    let (_, global, stream, _) = weak_setup(9);
    let out = local_weak_round(1, &stream, &[], None, &global, &Modality::ALL, &weak(1, 0.5), &mut rng_for(0, &[])).unwrap();
    assert!(matches!(out, RoundOutput::Skipped { .. }));
}

fn random_encoders(seed: u64) -> BTreeMap<Modality, DenseNet> {
    let cfg = ExperimentConfig::default();
    ModelBundle::init(&cfg.model_spec(), &mut rng_for(seed, &[])).unwrap().encoders
}

fn plain_fedavg(nets: &[(&DenseNet, f64)]) -> Vec<f64> {
    let total: f64 = nets.iter().map(|(_, w)| w).sum();
    let mut acc = vec![0.0; nets[0].0.param_count()];
    for (n, w) in nets {
        for (a, p) in acc.iter_mut().zip(n.params()) {
            *a += w / total * p;
        }
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn homogeneous_modality_wise_equals_plain_fedavg(
        seeds in prop::collection::vec(any::<u64>(), 1..5),
        counts in prop::collection::vec(1usize..500, 5),
    ) {
        let previous = random_encoders(0);
        let updates: Vec<EncoderUpdate> = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| EncoderUpdate {
                node_id: i as u32,
                encoders: random_encoders(s),
                counts: Modality::ALL.iter().map(|&m| (m, counts[i])).collect(),
            })
            .collect();
        let (agg, contrib) = modality_wise_fedavg(&previous, &updates).unwrap();
        prop_assert_eq!(contrib.len(), 3);
        for m in Modality::ALL {
            let nets: Vec<(&DenseNet, f64)> = updates.iter().map(|u| (&u.encoders[&m], u.counts[&m] as f64)).collect();
            for (a, b) in agg[&m].params().iter().zip(plain_fedavg(&nets)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_ignores_submission_order(seed in any::<u64>(), rot in 0usize..4) {
        let mut rng = rng_for(seed, &[]);
        let mut updates: Vec<EncoderUpdate> = (0..4u32)
            .map(|i| {
                let mut encoders = random_encoders(rng.random());
                if rng.random_bool(0.5) {
                    encoders.remove(&Modality::ALL[rng.random_range(0..3)]);
                }
                let counts = encoders.keys().map(|&m| (m, rng.random_range(1..100))).collect();
                EncoderUpdate { node_id: i, encoders, counts }
            })
            .collect();
        let previous = random_encoders(1);
        let (a, _) = modality_wise_fedavg(&previous, &updates).unwrap();
        updates.rotate_left(rot);
        updates.reverse();
        let (b, _) = modality_wise_fedavg(&previous, &updates).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn uniform_random_predictions_score_chance() {
    let classes = 8;
    let n = 8000;
    let mut rng = rng_for(42, &[]);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let counts = fedmark::datagen::ClassDistribution { counts: vec![10; classes] };
    let e = evaluate_predictions(&preds, &labels, &counts).unwrap();
    let p = 1.0 / classes as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((e.accuracy - p).abs() < 4.0 * sd, "{}", e.accuracy);
}

fn run(cfg: &ExperimentConfig, workers: usize) -> RunOutput {
    run_three_stage(cfg, &RunOptions { workers, pretrain_only: false }).unwrap()
}

#[test]
fn zero_rounds_emit_only_pretrain_metrics() {
    let mut cfg = small_cfg(10);
    cfg.unsupervised.rounds = 0;
    cfg.weak.rounds = 0;
    let out = run(&cfg, 1);
    assert!(out.report.records.iter().all(|r| r.stage == "pretrain"));
    assert_eq!(out.report.fl_round_records(), 0);
    let s = out.report.summary.unwrap();
    assert!(s.three_stage.is_none() && s.supervised_only.is_none());
}

#[test]
fn pretrain_only_option_matches_zero_rounds() {
    let cfg = small_cfg(11);
    let only = run_three_stage(&cfg, &RunOptions { workers: 1, pretrain_only: true }).unwrap();
    let mut zero = cfg.clone();
    zero.unsupervised.rounds = 0;
    zero.weak.rounds = 0;
    assert_eq!(only.report.to_jsonl(), run(&zero, 1).report.to_jsonl());
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let cfg = small_cfg(12);
    let a = run(&cfg, 1);
    let b = run(&cfg, 4);
    let c = run(&cfg, 1);
    assert_eq!(a.report.to_jsonl(), b.report.to_jsonl());
    assert_eq!(a.report.to_jsonl(), c.report.to_jsonl());
    assert_eq!(a.server.global.flat_params(), b.server.global.flat_params());
}

#[test]
fn stage_two_leaves_the_classifier_alone() {
    let mut cfg = small_cfg(13);
    cfg.weak.rounds = 0;
    let out = run(&cfg, 1);
    let world = build_world(&cfg).unwrap();
    let (pre, _) = pretrain(
        &cfg.model_spec(),
        &server_pool(&cfg, &world).unwrap(),
        &SupervisedParams {
            epochs: cfg.pretrain.epochs,
            learning_rate: cfg.pretrain.learning_rate,
            batch_size: cfg.pretrain.batch_size,
        },
        &mut rng_for(cfg.seed, &[fedmark::rng::stream::PRETRAIN]),
    )
    .unwrap();
    assert_eq!(out.server.global.classifier, pre.classifier);
    assert_ne!(out.server.global.encoders, pre.encoders);
    assert_eq!(out.server.round, 2);
}

#[test]
fn round_log_accounts_for_every_selected_node() {
    let mut cfg = small_cfg(14);
    cfg.unsupervised.participation = 0.5;
    let out = run(&cfg, 1);
    assert_eq!(out.server.log.len(), 4);
    for r in &out.server.log {
        let mut seen: Vec<u32> = r.aggregated.iter().chain(&r.dropped).chain(&r.skipped).copied().collect();
        seen.sort();
        let mut sel = r.selected.clone();
        sel.sort();
        assert_eq!(seen, sel);
        assert!(r.round_time_s > 0.0);
    }
    assert!(out.server.log.iter().filter(|r| r.stage == StageId::UnsupervisedFl).all(|r| r.selected.len() == 2));
}
