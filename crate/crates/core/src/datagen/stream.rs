//! Synthetic subject streams.
//!
//! A stream is a sequence of 2-second samples. The timeline is planned first
//! (episodes of one activity, grouped into coarse sessions that may be written to
//! the activity log); features are then drawn per sample from their own seeded
//! stream, so a filtered stream can be produced without materializing the
//! samples it drops.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::profile::SubjectProfile;
use super::select::{SelectionPolicy, Selector};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::rng::{derive_seed, SimRng};
use crate::weak::{ActivityLogEntry, LocalLabelMap};
use rand::SeedableRng;

pub const SAMPLE_PERIOD_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalSample {
    pub timestamp: f64,
    pub modality_data: BTreeMap<Modality, Vec<f64>>,
    pub human_present: bool,
    /// Annotated class index, present for the labeled fraction only.
    pub fine_label: Option<usize>,
    /// Coarse label of the logged session this sample belongs to.
    pub coarse_label: Option<String>,
    /// Ground-truth activity. Used for evaluation and never for training.
    pub activity: Option<usize>,
}

/// Shared generative structure of an experiment: class prototypes per modality
/// and the timeline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    num_classes: usize,
    label_map: LocalLabelMap,
    prototypes: BTreeMap<Modality, Vec<Vec<f64>>>,
    pub noise_sigma: f64,
    pub episode_s: (f64, f64),
    pub max_session_episodes: usize,
}

impl World {
    pub fn new<R: Rng + ?Sized>(label_map: LocalLabelMap, noise_sigma: f64, rng: &mut R) -> Result<Self> {
        let num_classes = label_map.num_classes();
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        let prototypes = Modality::ALL
            .iter()
            .map(|&m| {
                let protos = (0..num_classes)
                    .map(|_| (0..m.input_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect();
                (m, protos)
            })
            .collect();
        Ok(Self {
            num_classes,
            label_map,
            prototypes,
            noise_sigma,
            episode_s: (60.0, 600.0),
            max_session_episodes: 4,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label_map(&self) -> &LocalLabelMap {
        &self.label_map
    }

    pub fn prototype(&self, m: Modality, class: usize) -> &[f64] {
        &self.prototypes[&m][class]
    }

    /// Draws the features of one sample from a seeded per-sample stream.
    pub fn features(&self, profile: &SubjectProfile, activity: Option<usize>, seed: u64) -> BTreeMap<Modality, Vec<f64>> {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut out = BTreeMap::new();
        for &m in &Modality::ALL {
            // Draw for every modality so availability does not shift the stream.
            let mut x: Vec<f64> = (0..m.input_dim())
                .map(|k| {
                    let base = activity.map_or(0.0, |c| self.prototypes[&m][c][k]);
                    base + self.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            if profile.has(m) {
                profile.domain_shift[&m].apply(&mut x);
                out.insert(m, x);
            }
        }
        out
    }
}

/// Class probabilities of a subject: a Dirichlet draw over the first
/// `activity_richness` classes, tilted and renormalized.
pub fn class_mass<R: Rng + ?Sized>(profile: &SubjectProfile, num_classes: usize, rng: &mut R) -> Result<Vec<f64>> {
    profile.validate(num_classes)?;
    let gamma = Gamma::new(profile.dirichlet_alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..64 {
        let mut mass: Vec<f64> = (0..num_classes)
            .map(|c| {
                if c < profile.activity_richness {
                    gamma.sample(rng) * profile.class_tilt[c]
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = mass.iter().sum();
        if total > 0.0 && total.is_finite() {
            mass.iter_mut().for_each(|p| *p /= total);
            return Ok(mass);
        }
    }
    Err(Error::Degenerate("Dirichlet draw underflowed repeatedly".into()))
}

fn draw_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    start: usize,
    end: usize,
    activity: Option<usize>,
    coarse: Option<usize>,
}

/// Planned timeline of a subject before features are drawn.
#[derive(Debug, Clone)]
struct Plan {
    segments: Vec<Segment>,
    log: Vec<ActivityLogEntry>,
    num_samples: usize,
    label_seed: u64,
    feature_seed: u64,
}

fn plan_timeline<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    world: &World,
    mass: &[f64],
    duration_s: f64,
    rng: &mut R,
) -> Result<Plan> {
    if !(duration_s > 0.0) {
        return Err(Error::Config("duration must be positive".into()));
    }
    let label_seed = rng.next_u64();
    let feature_seed = rng.next_u64();
    let num_samples = (duration_s / SAMPLE_PERIOD_S).floor() as usize;
    let map = world.label_map();
    let episode_len = |rng: &mut R| -> usize {
        let secs = rng.random_range(world.episode_s.0..=world.episode_s.1);
        ((secs / SAMPLE_PERIOD_S).round() as usize).max(1)
    };
    let mut segments = Vec::new();
    let mut log = Vec::new();
    let mut cursor = 0;
    while cursor < num_samples {
        if rng.random::<f64>() < profile.absence_fraction {
            let end = (cursor + episode_len(rng)).min(num_samples);
            segments.push(Segment {
                start: cursor,
                end,
                activity: None,
                coarse: None,
            });
            cursor = end;
            continue;
        }
        let first = draw_categorical(mass, rng);
        let category = map.category_of(first);
        // A coarse activity alternates between the member classes the subject
        // performs, in class order, with one episode length per session.
        let members: Vec<usize> = match category {
            Some(k) => map.categories()[k].1.iter().copied().filter(|&c| mass[c] > 0.0).collect(),
            None => vec![first],
        };
        let offset = members.iter().position(|&c| c == first).unwrap_or(0);
        let max_eps = world.max_session_episodes.max(1);
        let episodes = if members.len() > 1 {
            members.len() * rng.random_range(1..=(max_eps / members.len()).max(1))
        } else {
            rng.random_range(1..=max_eps)
        };
        let logged = category.is_some() && rng.random::<f64>() < profile.log_fraction;
        let len = episode_len(rng);
        let session_start = cursor;
        for e in 0..episodes {
            if cursor >= num_samples {
                break;
            }
            let activity = members[(offset + e) % members.len()];
            let end = (cursor + len).min(num_samples);
            segments.push(Segment {
                start: cursor,
                end,
                activity: Some(activity),
                coarse: if logged { category } else { None },
            });
            cursor = end;
        }
        if logged {
            let k = category.expect("logged sessions have a category");
            let start = session_start as f64 * SAMPLE_PERIOD_S;
            let end = (cursor - 1) as f64 * SAMPLE_PERIOD_S + 0.5 * SAMPLE_PERIOD_S;
            log.push(ActivityLogEntry::new(start, end, map.categories()[k].0.clone())?);
        }
    }
    Ok(Plan {
        segments,
        log,
        num_samples,
        label_seed,
        feature_seed,
    })
}

/// Sample metadata before features are drawn.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SampleHeader {
    pub index: usize,
    pub timestamp: f64,
    pub human_present: bool,
    pub activity: Option<usize>,
    pub fine_label: Option<usize>,
    pub coarse: Option<usize>,
}

fn headers<'a>(profile: &SubjectProfile, plan: &'a Plan) -> impl Iterator<Item = SampleHeader> + 'a {
    let mut label_rng = SimRng::seed_from_u64(plan.label_seed);
    let label_fraction = profile.label_fraction;
    plan.segments.iter().flat_map(move |seg| {
        let draws: Vec<bool> = (seg.start..seg.end).map(|_| label_rng.random::<f64>() < label_fraction).collect();
        (seg.start..seg.end).zip(draws).map(move |(index, keep)| SampleHeader {
            index,
            timestamp: index as f64 * SAMPLE_PERIOD_S,
            human_present: seg.activity.is_some(),
            activity: seg.activity,
            fine_label: if keep { seg.activity } else { None },
            coarse: seg.coarse,
        })
    })
}

/// A generated subject stream with the activity log written alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub samples: Vec<MultiModalSample>,
    pub log: Vec<ActivityLogEntry>,
    pub class_mass: Vec<f64>,
    /// Number of samples in the unfiltered stream.
    pub raw_len: usize,
}

fn materialize(profile: &SubjectProfile, world: &World, plan: &Plan, h: SampleHeader) -> MultiModalSample {
    let seed = derive_seed(plan.feature_seed, &[h.index as u64]);
    MultiModalSample {
        timestamp: h.timestamp,
        modality_data: world.features(profile, h.activity, seed),
        human_present: h.human_present,
        fine_label: h.fine_label,
        coarse_label: h.coarse.map(|k| world.label_map().categories()[k].0.clone()),
        activity: h.activity,
    }
}

/// One sample every 2 simulated seconds over `duration_s`, starting at midnight.
pub fn generate_subject_stream<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    world: &World,
    duration_s: f64,
    rng: &mut R,
) -> Result<GeneratedStream> {
    let mass = class_mass(profile, world.num_classes(), rng)?;
    let plan = plan_timeline(profile, world, &mass, duration_s, rng)?;
    let samples = headers(profile, &plan)
        .map(|h| materialize(profile, world, &plan, h))
        .collect();
    Ok(GeneratedStream {
        samples,
        log: plan.log.clone(),
        class_mass: mass,
        raw_len: plan.num_samples,
    })
}

/// Equivalent to `select_data(generate_subject_stream(..))` but draws features
/// only for the samples that survive the policy.
pub fn generate_selected_stream<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    world: &World,
    duration_s: f64,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<GeneratedStream> {
    let mass = class_mass(profile, world.num_classes(), rng)?;
    let plan = plan_timeline(profile, world, &mass, duration_s, rng)?;
    let mut selector = Selector::new(policy);
    let samples = headers(profile, &plan)
        .filter(|h| selector.keep(h.timestamp, h.human_present))
        .map(|h| materialize(profile, world, &plan, h))
        .collect();
    Ok(GeneratedStream {
        samples,
        log: plan.log.clone(),
        class_mass: mass,
        raw_len: plan.num_samples,
    })
}

/// Fully labeled samples with `per_class` samples of every class, in class
/// order, as seen through the subject's sensors and domain shift.
pub fn generate_labeled_set<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    world: &World,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<MultiModalSample>> {
    profile.validate(world.num_classes())?;
    let base = rng.next_u64();
    let mut out = Vec::with_capacity(per_class * world.num_classes());
    for c in 0..world.num_classes() {
        for j in 0..per_class {
            let index = c * per_class + j;
            out.push(MultiModalSample {
                timestamp: index as f64 * SAMPLE_PERIOD_S,
                modality_data: world.features(profile, Some(c), derive_seed(base, &[index as u64])),
                human_present: true,
                fine_label: Some(c),
                coarse_label: None,
                activity: Some(c),
            });
        }
    }
    Ok(out)
}

/// Per-class counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: Vec<usize>,
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Classes ordered by descending count, ties by ascending index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.counts.len()).collect();
        idx.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        idx
    }
}

/// Counts of annotated samples per class.
pub fn class_distribution(stream: &[MultiModalSample], num_classes: usize) -> ClassDistribution {
    let mut counts = vec![0; num_classes];
    for c in stream.iter().filter_map(|s| s.fine_label) {
        if c < num_classes {
            counts[c] += 1;
        }
    }
    ClassDistribution { counts }
}

/// Counts of ground-truth activities per class (evaluation only).
pub fn activity_distribution(stream: &[MultiModalSample], num_classes: usize) -> ClassDistribution {
    let mut counts = vec![0; num_classes];
    for c in stream.iter().filter_map(|s| s.activity) {
        if c < num_classes {
            counts[c] += 1;
        }
    }
    ClassDistribution { counts }
}

/// One JSON object per sample.
pub fn stream_to_jsonl(stream: &[MultiModalSample]) -> String {
    let mut out = String::new();
    for s in stream {
        out.push_str(&serde_json::to_string(s).expect("samples serialize"));
        out.push('\n');
    }
    out
}
