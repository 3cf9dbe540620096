//! Experiment orchestration: roster, centralized pre-training, the two FL
//! stages with simulated round timing, and the baselines they are compared to.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{modality_wise_fedavg, weighted_average, EncoderUpdate};
use super::bundle::{ModelBundle, ModelSpec};
use super::eval::{evaluate, Evaluation};
use super::train::{
    local_unsup_round, local_weak_round, train_supervised, train_units, unit_class_counts, RoundOutput,
    SupervisedParams, TrainUnit, UnsupParams, WeakParams, WeakUpdate,
};
use crate::activities::ActivityTable;
use crate::config::ExperimentConfig;
use crate::datagen::{
    activity_distribution, generate_labeled_set, generate_selected_stream, random_shift, ClassDistribution, Group,
    MultiModalSample, SubjectProfile, World,
};
use crate::error::{Error, Result};
use crate::losses::{random_projection, ClassCounts, KdConfig};
use crate::modality::Modality;
use crate::nn::Tensor;
use crate::report::{ApproachScore, MetricRecord, MetricsReport, Summary};
use crate::rng::{rng_for, stream};
use crate::sysim::{down_at, failure_schedule, simulate_round, BandwidthTrace, RoundNode, SensorFailure};
use crate::weak::associate;

const DAY_S: f64 = 86_400.0;
/// Horizon of the bandwidth noise path and failure schedules.
const SYSTEM_HORIZON_DAYS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Pretrain,
    UnsupervisedFl,
    WeakFl,
}

impl StageId {
    pub fn name(self) -> &'static str {
        match self {
            StageId::Pretrain => "pretrain",
            StageId::UnsupervisedFl => "unsupervised_fl",
            StageId::WeakFl => "weak_fl",
        }
    }
}

/// Who took part in one FL round and what happened to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub stage: StageId,
    pub round: usize,
    pub start_s: f64,
    pub round_time_s: f64,
    pub selected: Vec<u32>,
    pub aggregated: Vec<u32>,
    pub dropped: Vec<u32>,
    pub skipped: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: ModelBundle,
    pub round: u64,
    pub log: Vec<RoundLog>,
}

impl ServerState {
    pub fn new(global: ModelBundle) -> Self {
        Self {
            global,
            round: 0,
            log: Vec::new(),
        }
    }

    fn finish_round(&mut self, entry: RoundLog) {
        self.round += 1;
        self.global.version = self.round;
        self.log.push(entry);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: u32,
    pub profile: SubjectProfile,
    /// Samples kept by the data-selection policy, time-ordered. Every sample
    /// is available to stage 2; annotated ones also feed the baselines.
    pub samples: Vec<MultiModalSample>,
    pub units: Vec<TrainUnit>,
    pub unit_counts: Option<ClassCounts>,
    /// Ground-truth activity histogram of `samples`; defines head and tail.
    pub train_activity: ClassDistribution,
    pub test: Vec<MultiModalSample>,
    pub failures: Vec<SensorFailure>,
    /// Latest model trained on this node, if any.
    pub local_model: Option<ModelBundle>,
    pub clock: f64,
}

impl NodeState {
    pub fn labeled(&self) -> Vec<&MultiModalSample> {
        self.samples.iter().filter(|s| s.fine_label.is_some()).collect()
    }

    /// Sensors that are installed and not under repair at `t_s`.
    pub fn live_modalities(&self, t_s: f64) -> Vec<Modality> {
        let down = down_at(&self.failures, t_s);
        self.profile
            .available_modalities
            .iter()
            .copied()
            .filter(|m| !down.contains(m))
            .collect()
    }
}

/// Node profiles. Groups cycle NC, MCI, AD; richness shrinks by
/// `richness_step` per group; AD subjects put extra mass on sedentary classes.
pub fn build_roster(cfg: &ExperimentConfig) -> Result<Vec<SubjectProfile>> {
    let table = ActivityTable::builtin();
    let classes = cfg.class_set(&table)?;
    let c = classes.len();
    let r = &cfg.roster;
    let sedentary: Vec<usize> = r.sedentary_classes.iter().filter_map(|&id| classes.index_of(id)).collect();
    let mut out = Vec::with_capacity(r.nodes);
    for id in 0..r.nodes as u32 {
        let mut rng = rng_for(cfg.seed, &[stream::PROFILE, id as u64]);
        let mut group = Group::ALL[id as usize % 3];
        let ov = r.subjects.iter().find(|s| s.subject_id == id);
        if let Some(g) = ov.and_then(|o| o.group) {
            group = g;
        }
        let step = match group {
            Group::Nc => 0,
            Group::Mci => 1,
            Group::Ad => 2,
        };
        let mut class_tilt = vec![1.0; c];
        if group == Group::Ad {
            for &s in &sedentary {
                class_tilt[s] = r.ad_sedentary_tilt;
            }
        }
        let domain_shift = random_shift(&mut rng);
        let mut available: Vec<Modality> = Modality::ALL.to_vec();
        if rng.random::<f64>() < r.missing_modality_fraction {
            available.remove(rng.random_range(0..available.len()));
        }
        let mut p = SubjectProfile {
            subject_id: id,
            group,
            dirichlet_alpha: r.dirichlet_alpha,
            domain_shift,
            available_modalities: available,
            label_fraction: r.label_fraction,
            activity_richness: c - step * r.richness_step,
            class_tilt,
            log_fraction: r.log_fraction,
            absence_fraction: r.absence_fraction,
        };
        if let Some(o) = ov {
            if let Some(v) = o.dirichlet_alpha {
                p.dirichlet_alpha = v;
            }
            if let Some(v) = o.label_fraction {
                p.label_fraction = v;
            }
            if let Some(v) = o.log_fraction {
                p.log_fraction = v;
            }
            if let Some(v) = o.activity_richness {
                p.activity_richness = v;
            }
            if let Some(v) = &o.modalities {
                let mut v = v.clone();
                v.sort();
                v.dedup();
                p.available_modalities = v;
            }
        }
        p.validate(c)?;
        out.push(p);
    }
    Ok(out)
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<World> {
    let table = ActivityTable::builtin();
    let local = cfg.weak_label_map(&table)?.restrict(&cfg.class_set(&table)?);
    let mut world = World::new(local, cfg.data.noise_sigma, &mut rng_for(cfg.seed, &[stream::WORLD]))?;
    world.episode_s = (cfg.data.episode_min_s, cfg.data.episode_max_s);
    world.max_session_episodes = cfg.data.max_session_episodes;
    Ok(world)
}

fn build_node(cfg: &ExperimentConfig, world: &World, profile: SubjectProfile) -> Result<NodeState> {
    let id = profile.subject_id;
    let c = world.num_classes();
    let generated = generate_selected_stream(
        &profile,
        world,
        cfg.data.duration_days * DAY_S,
        &cfg.data.selection,
        &mut rng_for(cfg.seed, &[stream::SUBJECT, id as u64]),
    )?;
    let samples = generated.samples;
    let weak = associate(&generated.log, &samples, world.label_map(), cfg.weak.batch_size)?;
    let units = train_units(&weak, &samples, cfg.weak.batch_size);
    let unit_counts = unit_class_counts(&units, &samples, c);
    // The test set covers every class the subject performs, in equal numbers.
    let test: Vec<MultiModalSample> = generate_labeled_set(
        &profile,
        world,
        cfg.data.test_per_class,
        &mut rng_for(cfg.seed, &[stream::TEST, id as u64]),
    )?
    .into_iter()
    .filter(|s| s.activity.is_some_and(|a| generated.class_mass[a] > 0.0))
    .collect();
    let failures = if cfg.failures.enabled {
        failure_schedule(
            &cfg.failures.process(),
            &profile.available_modalities,
            SYSTEM_HORIZON_DAYS,
            &mut rng_for(cfg.seed, &[stream::FAILURE, id as u64]),
        )?
    } else {
        Vec::new()
    };
    Ok(NodeState {
        node_id: id,
        train_activity: activity_distribution(&samples, c),
        samples,
        units,
        unit_counts,
        test,
        failures,
        profile,
        local_model: None,
        clock: 0.0,
    })
}

/// Labeled server-side pool: `server_subjects` extra subjects with their own
/// domain shifts and every sensor, `per_class` samples of each class.
pub fn server_pool(cfg: &ExperimentConfig, world: &World) -> Result<Vec<MultiModalSample>> {
    let c = world.num_classes();
    let mut pool = Vec::new();
    for k in 0..cfg.pretrain.server_subjects as u64 {
        let mut rng = rng_for(cfg.seed, &[stream::SERVER, k]);
        let profile = SubjectProfile {
            subject_id: u32::MAX - k as u32,
            group: Group::Nc,
            dirichlet_alpha: 1.0,
            domain_shift: random_shift(&mut rng),
            available_modalities: Modality::ALL.to_vec(),
            label_fraction: 1.0,
            activity_richness: c,
            class_tilt: vec![1.0; c],
            log_fraction: 0.0,
            absence_fraction: 0.0,
        };
        pool.extend(generate_labeled_set(&profile, world, cfg.pretrain.per_class, &mut rng)?);
    }
    Ok(pool)
}

/// Stage 1: plain cross-entropy on the server pool from a seeded
/// initialization. The result has version 0.
pub fn pretrain<R: Rng + ?Sized>(
    spec: &ModelSpec,
    pool: &[MultiModalSample],
    params: &SupervisedParams,
    rng: &mut R,
) -> Result<(ModelBundle, Option<f64>)> {
    if pool.is_empty() {
        return Err(Error::Data("empty pre-training pool".into()));
    }
    if let Some(s) = pool.iter().find(|s| s.modality_data.len() != Modality::ALL.len()) {
        return Err(Error::Modality(format!("pre-training sample at t={} lacks a modality", s.timestamp)));
    }
    let mut bundle = ModelBundle::init(spec, rng)?;
    let refs: Vec<&MultiModalSample> = pool.iter().collect();
    let loss = train_supervised(&mut bundle, &refs, &Modality::ALL, params, rng)?;
    bundle.version = 0;
    Ok((bundle, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    pub pretrain_only: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            pretrain_only: false,
        }
    }
}

/// Test scores of one node under each approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScores {
    pub node_id: u32,
    pub group: Group,
    pub modalities: Vec<Modality>,
    pub train_samples: usize,
    pub labeled: usize,
    pub weak_samples: usize,
    pub pretrained: Evaluation,
    pub supervised: Option<Evaluation>,
    pub three_stage: Option<Evaluation>,
    pub three_stage_global: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub server: ServerState,
    pub nodes: Vec<NodeScores>,
}

fn eval_record(stage: &str, round: usize, t_s: f64, node_id: u32, e: &Evaluation) -> MetricRecord {
    MetricRecord {
        node_id: Some(node_id),
        accuracy: Some(e.accuracy),
        per_class: Some(e.per_class.clone()),
        head_acc: e.head_acc,
        tail_acc: e.tail_acc,
        ..MetricRecord::new(stage, round, t_s)
    }
}

fn mean_score<'a>(evals: impl Iterator<Item = &'a Evaluation>) -> ApproachScore {
    let (mut acc, mut head, mut tail) = (Vec::new(), Vec::new(), Vec::new());
    for e in evals {
        acc.push(e.accuracy);
        head.extend(e.head_acc);
        tail.extend(e.tail_acc);
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    ApproachScore {
        accuracy: mean(&acc),
        head_acc: mean(&head),
        tail_acc: mean(&tail),
    }
}

/// Nodes selected for a round: everyone at participation 1, otherwise a
/// seeded subset of `ceil(fraction · n)`, in node_id order.
fn select_participants(seed: u64, stage: StageId, round: usize, n: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = rng_for(seed, &[stream::PARTICIPATION, stage as u64, round as u64]);
    let mut picked = sample_indices(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Per-node plan for one round: which sensors are live, the simulated
/// workload, and whether the node has anything to train on.
struct Planned {
    idx: usize,
    live: Vec<Modality>,
    timing: Option<RoundNode>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    nodes: &'a [NodeState],
    pool: &'a rayon::ThreadPool,
    trace: &'a BandwidthTrace,
}

impl Ctx<'_> {
    fn schedule(
        &self,
        stage: StageId,
        round: usize,
        clock: f64,
        upload: impl Fn(&NodeState, &[Modality]) -> Option<(usize, u64)>,
        download_bytes: u64,
    ) -> Result<(Vec<Planned>, crate::sysim::RoundOutcome)> {
        let participation = match stage {
            StageId::WeakFl => self.cfg.weak.participation,
            _ => self.cfg.unsupervised.participation,
        };
        let selected = select_participants(self.cfg.seed, stage, round, self.nodes.len(), participation);
        let planned: Vec<Planned> = selected
            .into_iter()
            .map(|idx| {
                let node = &self.nodes[idx];
                let live = node.live_modalities(clock);
                let timing = if live.is_empty() {
                    None
                } else {
                    upload(node, &live).map(|(work, bytes)| RoundNode {
                        node_id: node.node_id,
                        compute_s: work as f64 * self.cfg.system.compute_s_per_sample,
                        upload_bytes: bytes,
                    })
                };
                Planned { idx, live, timing }
            })
            .collect();
        let round_nodes: Vec<RoundNode> = planned.iter().filter_map(|p| p.timing.clone()).collect();
        let outcome = simulate_round(&round_nodes, clock, self.trace, &self.cfg.network, download_bytes)?;
        Ok((planned, outcome))
    }
}

/// Modality-wise FedAvg of the encoders and sample-weighted FedAvg of the
/// classifier, reduced in node_id order.
fn fedavg_bundles(global: &mut ModelBundle, updates: &[WeakUpdate]) -> Result<()> {
    let enc: Vec<EncoderUpdate> = updates
        .iter()
        .map(|u| EncoderUpdate {
            node_id: u.node_id,
            encoders: u.modalities.iter().map(|m| (*m, u.bundle.encoders[m].clone())).collect(),
            counts: u.modalities.iter().map(|m| (*m, u.samples)).collect(),
        })
        .collect();
    let (encoders, _) = modality_wise_fedavg(&global.encoders, &enc)?;
    let mut ordered: Vec<&WeakUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.node_id);
    let heads: Vec<_> = ordered.iter().map(|u| (&u.bundle.classifier, u.samples as f64)).collect();
    global.classifier = weighted_average(&heads)?;
    global.encoders = encoders;
    Ok(())
}

/// The supervised-only baseline: every node with annotations joins every
/// round with all its sensors; plain cross-entropy, no distillation, no
/// system timing. Returns each node's last local model.
fn supervised_baseline(
    cfg: &ExperimentConfig,
    nodes: &[NodeState],
    pool: &rayon::ThreadPool,
    pretrained: &ModelBundle,
) -> Result<Vec<Option<ModelBundle>>> {
    let s = &cfg.supervised;
    let params = WeakParams {
        epochs: s.local_epochs,
        learning_rate: s.learning_rate,
        permutation_budget: 0,
        kd: KdConfig::new(1.0, 0.0)?,
        balanced: false,
    };
    let units: Vec<Vec<TrainUnit>> = nodes.iter().map(|n| train_units(&[], &n.samples, s.batch_size)).collect();
    let counts: Vec<Option<ClassCounts>> = nodes
        .iter()
        .zip(&units)
        .map(|(n, u)| unit_class_counts(u, &n.samples, pretrained.num_classes()))
        .collect();
    let mut global = pretrained.clone();
    let mut local: Vec<Option<ModelBundle>> = vec![None; nodes.len()];
    for round in 0..s.rounds {
        let results: Vec<(usize, RoundOutput<WeakUpdate>)> = pool.install(|| {
            (0..nodes.len())
                .into_par_iter()
                .map(|i| {
                    let n = &nodes[i];
                    let mut rng = rng_for(cfg.seed, &[stream::SUPERVISED, round as u64, n.node_id as u64]);
                    local_weak_round(
                        n.node_id,
                        &n.samples,
                        &units[i],
                        counts[i].as_ref(),
                        &global,
                        &n.profile.available_modalities,
                        &params,
                        &mut rng,
                    )
                    .map(|r| (i, r))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut updates = Vec::new();
        for (i, r) in results {
            if let RoundOutput::Trained { update, .. } = r {
                local[i] = Some(update.bundle.clone());
                updates.push(update);
            }
        }
        if !updates.is_empty() {
            fedavg_bundles(&mut global, &updates)?;
        }
    }
    Ok(local)
}

/// Runs pre-training, `unsupervised.rounds` contrastive FL rounds and
/// `weak.rounds` weakly supervised FL rounds, timing every round with the
/// system model. The report is a pure function of the config.
pub fn run_three_stage(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let seed = cfg.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let spec = cfg.model_spec();
    let world = build_world(cfg)?;
    let profiles = build_roster(cfg)?;
    let mut nodes: Vec<NodeState> = pool.install(|| {
        profiles
            .into_par_iter()
            .map(|p| build_node(cfg, &world, p))
            .collect::<Result<Vec<_>>>()
    })?;
    let server_data = server_pool(cfg, &world)?;
    let projection: Tensor = random_projection(spec.embed_dim, &mut rng_for(seed, &[stream::FUSION]));
    let trace = BandwidthTrace::new(cfg.trace.clone(), SYSTEM_HORIZON_DAYS * DAY_S, &mut rng_for(seed, &[stream::TRACE]))?;

    let start = cfg.system.start_hour * 3600.0;
    let mut report = MetricsReport::default();

    // Stage 1.
    let pre_params = SupervisedParams {
        epochs: cfg.pretrain.epochs,
        learning_rate: cfg.pretrain.learning_rate,
        batch_size: cfg.pretrain.batch_size,
    };
    let (global, pre_loss) = pretrain(&spec, &server_data, &pre_params, &mut rng_for(seed, &[stream::PRETRAIN]))?;
    report.push(MetricRecord {
        loss: pre_loss,
        ..MetricRecord::new(StageId::Pretrain.name(), 0, start)
    });
    let pretrained: Vec<Evaluation> = pool.install(|| {
        nodes
            .par_iter()
            .map(|n| evaluate(&global, &n.test, &n.profile.available_modalities, &n.train_activity))
            .collect::<Result<Vec<_>>>()
    })?;
    for (n, e) in nodes.iter().zip(&pretrained) {
        report.push(eval_record(StageId::Pretrain.name(), 0, start, n.node_id, e));
    }

    let fl = !opts.pretrain_only && cfg.unsupervised.rounds + cfg.weak.rounds > 0;
    let mut server = ServerState::new(global);
    let mut supervised: Vec<Option<Evaluation>> = vec![None; nodes.len()];
    let mut three_stage: Vec<Option<Evaluation>> = vec![None; nodes.len()];
    let mut three_stage_global: Vec<Option<Evaluation>> = vec![None; nodes.len()];
    let mut clock = start;

    if fl {
        // Baseline: federated training on annotated samples only.
        let locals = supervised_baseline(cfg, &nodes, &pool, &server.global)?;
        let global = &server.global;
        let sup: Vec<Evaluation> = pool.install(|| {
            nodes
                .par_iter()
                .zip(locals.par_iter())
                .map(|(n, m)| {
                    evaluate(m.as_ref().unwrap_or(global), &n.test, &n.profile.available_modalities, &n.train_activity)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (n, e) in nodes.iter().zip(&sup) {
            report.push(eval_record("supervised_only", cfg.supervised.rounds, start, n.node_id, e));
        }
        supervised = sup.into_iter().map(Some).collect();

        let ctx = Ctx {
            cfg,
            nodes: &nodes,
            pool: &pool,
            trace: &trace,
        };

        // Stage 2.
        let u = &cfg.unsupervised;
        let unsup = UnsupParams {
            epochs: u.local_epochs,
            learning_rate: u.learning_rate,
            batch_size: u.batch_size,
            temperature: u.temperature,
        };
        for round in 0..u.rounds {
            let global = &server.global;
            let download = global.encoder_payload_bytes(&Modality::ALL);
            let (planned, outcome) = ctx.schedule(
                StageId::UnsupervisedFl,
                round,
                clock,
                |n, live| {
                    (n.samples.len() >= 2 * unsup.batch_size)
                        .then(|| (unsup.epochs * n.samples.len(), global.encoder_payload_bytes(live)))
                },
                download,
            )?;
            let dropped = outcome.dropped();
            let results: Vec<(usize, RoundOutput<EncoderUpdate>)> = ctx.pool.install(|| {
                planned
                    .par_iter()
                    .filter(|p| !dropped.contains(&ctx.nodes[p.idx].node_id))
                    .map(|p| {
                        let n = &ctx.nodes[p.idx];
                        let refs: Vec<&MultiModalSample> = n.samples.iter().collect();
                        let mut rng = rng_for(seed, &[stream::UNSUP, round as u64, n.node_id as u64]);
                        local_unsup_round(n.node_id, &refs, global, &p.live, &projection, &unsup, &mut rng)
                            .map(|r| (p.idx, r))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let end = clock + outcome.round_time_s;
            let mut updates = Vec::new();
            let mut skipped = Vec::new();
            for (idx, r) in results {
                let id = nodes[idx].node_id;
                match r {
                    RoundOutput::Trained { update, loss } => {
                        report.push(MetricRecord {
                            node_id: Some(id),
                            loss: Some(loss),
                            ..MetricRecord::new(StageId::UnsupervisedFl.name(), round, end)
                        });
                        updates.push(update);
                    }
                    RoundOutput::Skipped { reason } => {
                        report.push(MetricRecord {
                            node_id: Some(id),
                            note: Some(format!("skipped: {reason}")),
                            ..MetricRecord::new(StageId::UnsupervisedFl.name(), round, end)
                        });
                        skipped.push(id);
                    }
                }
            }
            if !updates.is_empty() {
                let (encoders, _) = modality_wise_fedavg(&server.global.encoders, &updates)?;
                server.global.encoders = encoders;
            }
            report.push(MetricRecord {
                round_time_s: Some(outcome.round_time_s),
                ..MetricRecord::new(StageId::UnsupervisedFl.name(), round, end)
            });
            server.finish_round(RoundLog {
                stage: StageId::UnsupervisedFl,
                round,
                start_s: clock,
                round_time_s: outcome.round_time_s,
                selected: planned.iter().map(|p| nodes[p.idx].node_id).collect(),
                aggregated: updates.iter().map(|u| u.node_id).collect(),
                dropped,
                skipped,
            });
            clock = end;
        }

        // Stage 3.
        let w = &cfg.weak;
        let weak = WeakParams {
            epochs: w.local_epochs,
            learning_rate: w.learning_rate,
            permutation_budget: w.permutation_budget,
            kd: KdConfig::new(w.kd_temperature, w.kd_weight)?,
            balanced: w.balanced,
        };
        let classifier_bytes = server.global.classifier.param_count() as u64 * 8;
        let mut local: Vec<Option<ModelBundle>> = vec![None; nodes.len()];
        for round in 0..w.rounds {
            let global = &server.global;
            let (planned, outcome) = ctx.schedule(
                StageId::WeakFl,
                round,
                clock,
                |n, live| {
                    let work: usize = n.units.iter().map(|u| u.samples().len()).sum();
                    (work > 0).then(|| (weak.epochs * work, global.encoder_payload_bytes(live) + classifier_bytes))
                },
                global.payload_bytes(),
            )?;
            let dropped = outcome.dropped();
            let results: Vec<(usize, RoundOutput<WeakUpdate>)> = ctx.pool.install(|| {
                planned
                    .par_iter()
                    .filter(|p| !dropped.contains(&ctx.nodes[p.idx].node_id))
                    .map(|p| {
                        let n = &ctx.nodes[p.idx];
                        let mut rng = rng_for(seed, &[stream::WEAK, round as u64, n.node_id as u64]);
                        local_weak_round(
                            n.node_id,
                            &n.samples,
                            &n.units,
                            n.unit_counts.as_ref(),
                            global,
                            &p.live,
                            &weak,
                            &mut rng,
                        )
                        .map(|r| (p.idx, r))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let end = clock + outcome.round_time_s;
            let mut updates = Vec::new();
            let mut skipped = Vec::new();
            for (idx, r) in results {
                let id = nodes[idx].node_id;
                match r {
                    RoundOutput::Trained { update, loss } => {
                        report.push(MetricRecord {
                            node_id: Some(id),
                            loss: Some(loss),
                            ..MetricRecord::new(StageId::WeakFl.name(), round, end)
                        });
                        local[idx] = Some(update.bundle.clone());
                        updates.push(update);
                    }
                    RoundOutput::Skipped { reason } => {
                        report.push(MetricRecord {
                            node_id: Some(id),
                            note: Some(format!("skipped: {reason}")),
                            ..MetricRecord::new(StageId::WeakFl.name(), round, end)
                        });
                        skipped.push(id);
                    }
                }
            }
            if !updates.is_empty() {
                fedavg_bundles(&mut server.global, &updates)?;
            }
            report.push(MetricRecord {
                round_time_s: Some(outcome.round_time_s),
                ..MetricRecord::new(StageId::WeakFl.name(), round, end)
            });
            server.finish_round(RoundLog {
                stage: StageId::WeakFl,
                round,
                start_s: clock,
                round_time_s: outcome.round_time_s,
                selected: planned.iter().map(|p| nodes[p.idx].node_id).collect(),
                aggregated: updates.iter().map(|u| u.node_id).collect(),
                dropped,
                skipped,
            });
            clock = end;
        }
        for (n, m) in nodes.iter_mut().zip(local) {
            n.local_model = m;
            n.clock = clock;
        }

        // Each node keeps its own last model; nodes that never trained in
        // stage 3 use the final global model.
        let global = &server.global;
        let finals: Vec<(Evaluation, Evaluation)> = pool.install(|| {
            nodes
                .par_iter()
                .map(|n| {
                    let mods = &n.profile.available_modalities;
                    let g = evaluate(global, &n.test, mods, &n.train_activity)?;
                    let l = match &n.local_model {
                        Some(m) => evaluate(m, &n.test, mods, &n.train_activity)?,
                        None => g.clone(),
                    };
                    Ok((l, g))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let stage = if cfg.weak.rounds > 0 { StageId::WeakFl } else { StageId::UnsupervisedFl };
        let last_round = match stage {
            StageId::WeakFl => cfg.weak.rounds,
            _ => cfg.unsupervised.rounds,
        };
        for (i, (l, g)) in finals.into_iter().enumerate() {
            report.push(eval_record(stage.name(), last_round, clock, nodes[i].node_id, &l));
            three_stage[i] = Some(l);
            three_stage_global[i] = Some(g);
        }
    }

    let fl_rounds: Vec<f64> = server.log.iter().map(|l| l.round_time_s).collect();
    report.summary = Some(Summary {
        seed,
        nodes: nodes.len(),
        pretrained_only: mean_score(pretrained.iter()),
        supervised_only: fl.then(|| mean_score(supervised.iter().flatten())),
        three_stage: fl.then(|| mean_score(three_stage.iter().flatten())),
        three_stage_global: fl.then(|| mean_score(three_stage_global.iter().flatten())),
        unsupervised_rounds: server.log.iter().filter(|l| l.stage == StageId::UnsupervisedFl).count(),
        weak_rounds: server.log.iter().filter(|l| l.stage == StageId::WeakFl).count(),
        mean_round_time_s: (!fl_rounds.is_empty()).then(|| fl_rounds.iter().sum::<f64>() / fl_rounds.len() as f64),
        total_time_s: clock - start,
        payload_bytes: server.global.payload_bytes(),
    });

    let scores = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| NodeScores {
            node_id: n.node_id,
            group: n.profile.group,
            modalities: n.profile.available_modalities.clone(),
            train_samples: n.samples.len(),
            labeled: n.labeled().len(),
            weak_samples: n
                .units
                .iter()
                .filter(|u| matches!(u, TrainUnit::Weak(_)))
                .map(|u| u.samples().len())
                .sum(),
            pretrained: pretrained[i].clone(),
            supervised: supervised[i].clone(),
            three_stage: three_stage[i].clone(),
            three_stage_global: three_stage_global[i].clone(),
        })
        .collect();
    Ok(RunOutput {
        report,
        server,
        nodes: scores,
    })
}
