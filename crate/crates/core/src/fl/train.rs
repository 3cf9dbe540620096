//! Local training loops for the three stages.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::EncoderUpdate;
use super::bundle::{batch_inputs, ModelBundle};
use crate::datagen::MultiModalSample;
use crate::error::{Error, Result};
use crate::losses::{
    balanced_ce, combined_weak_stage_loss, contrastive_fusion_loss, cross_entropy, default_recipes, fuse_features,
    kd_loss, ClassCounts, KdConfig,
};
use crate::modality::Modality;
use crate::nn::{l2_normalize, l2_normalize_backward, DenseNet, Tensor};
use crate::rng::rng_for;
use crate::weak::{permutation_ce_loss, WeakBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Plain cross-entropy minibatch SGD on labeled samples; returns the mean loss
/// of the last epoch (None with zero epochs).
pub fn train_supervised<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    samples: &[&MultiModalSample],
    modalities: &[Modality],
    params: &SupervisedParams,
    rng: &mut R,
) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Err(Error::Data("no labeled samples".into()));
    }
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| s.fine_label.ok_or_else(|| Error::Data("unlabeled sample in a supervised set".into())))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last = None;
    for _ in 0..params.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(params.batch_size.max(1)) {
            let batch: Vec<&MultiModalSample> = chunk.iter().map(|&i| samples[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let trace = bundle.forward_trace(&batch_inputs(&batch, modalities)?)?;
            let (loss, grad) = cross_entropy(trace.logits(), &y)?;
            let grads = bundle.backward(&trace, &grad)?;
            bundle.apply(&grads, params.learning_rate)?;
            total += loss * chunk.len() as f64;
        }
        last = Some(total / samples.len() as f64);
    }
    Ok(last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsupParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
}

/// Contrastive loss and encoder gradients for one batch. The loss is summed
/// over anchors; gradients are divided by the number of anchors.
fn contrastive_step(
    encoders: &BTreeMap<Modality, DenseNet>,
    batch: &[&MultiModalSample],
    modalities: &[Modality],
    projection: &Tensor,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<(f64, usize, BTreeMap<Modality, crate::nn::NetGrads>)> {
    let inputs = batch_inputs(batch, modalities)?;
    let mut traces = BTreeMap::new();
    let mut normalized = BTreeMap::new();
    for (m, x) in &inputs {
        let trace = encoders[m].forward_trace(x)?;
        normalized.insert(*m, l2_normalize(trace.output())?);
        traces.insert(*m, trace);
    }
    let recipes = default_recipes(modalities, projection, rng);
    let fusion = fuse_features(&normalized, &recipes)?;
    let (loss, mut grad) = contrastive_fusion_loss(&fusion.set, temperature)?;
    let anchors = fusion.set.len();
    grad.values_mut().iter_mut().for_each(|g| *g /= anchors as f64);
    let grad_emb = fusion.backward(&recipes, &grad)?;
    let mut grads = BTreeMap::new();
    for (m, trace) in &traces {
        let g_raw = l2_normalize_backward(trace.output(), &grad_emb[m])?;
        let (g, _) = encoders[m].backward_trace(trace, &g_raw)?;
        grads.insert(*m, g);
    }
    Ok((loss, anchors, grads))
}

/// Mean contrastive loss per anchor over consecutive batches, with recipes drawn
/// from `seed` so that two calls are comparable.
pub fn contrastive_eval(
    encoders: &BTreeMap<Modality, DenseNet>,
    samples: &[&MultiModalSample],
    modalities: &[Modality],
    projection: &Tensor,
    params: &UnsupParams,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng_for(seed, &[0]);
    let mut total = 0.0;
    let mut anchors = 0;
    for chunk in samples.chunks(params.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let (loss, n, _) = contrastive_step(encoders, chunk, modalities, projection, params.temperature, &mut rng)?;
        total += loss;
        anchors += n;
    }
    if anchors == 0 {
        return Err(Error::Data("too few samples for a contrastive batch".into()));
    }
    Ok(total / anchors as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutput<T> {
    Trained { update: T, loss: f64 },
    Skipped { reason: String },
}

/// Stage 2 on one node: contrastive fusion training of the encoders of
/// `modalities`, starting from the global encoders. The classifier is not
/// touched and is not part of the update.
pub fn local_unsup_round<R: Rng + ?Sized>(
    node_id: u32,
    samples: &[&MultiModalSample],
    global: &ModelBundle,
    modalities: &[Modality],
    projection: &Tensor,
    params: &UnsupParams,
    rng: &mut R,
) -> Result<RoundOutput<EncoderUpdate>> {
    if samples.len() < 2 * params.batch_size {
        return Ok(RoundOutput::Skipped {
            reason: format!("{} unlabeled samples, need {}", samples.len(), 2 * params.batch_size),
        });
    }
    if modalities.is_empty() {
        return Ok(RoundOutput::Skipped {
            reason: "no live sensors".into(),
        });
    }
    let mut encoders: BTreeMap<Modality, DenseNet> = modalities
        .iter()
        .map(|m| {
            global
                .encoders
                .get(m)
                .cloned()
                .map(|e| (*m, e))
                .ok_or_else(|| Error::Modality(format!("global model has no {m} encoder")))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss = f64::NAN;
    let mut step_rng = rng_for(rng.random(), &[]);
    for _ in 0..params.epochs {
        order.shuffle(&mut step_rng);
        let mut total = 0.0;
        let mut anchors = 0;
        for chunk in order.chunks(params.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&MultiModalSample> = chunk.iter().map(|&i| samples[i]).collect();
            let (l, n, grads) = contrastive_step(&encoders, &batch, modalities, projection, params.temperature, &mut step_rng)?;
            for (m, g) in &grads {
                encoders.get_mut(m).expect("trained modality").apply_gradients(g, params.learning_rate)?;
            }
            total += l;
            anchors += n;
        }
        loss = total / anchors.max(1) as f64;
    }
    let counts = modalities.iter().map(|&m| (m, samples.len())).collect();
    Ok(RoundOutput::Trained {
        update: EncoderUpdate {
            node_id,
            encoders,
            counts,
        },
        loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub permutation_budget: usize,
    pub kd: KdConfig,
    pub balanced: bool,
}

/// A stage-3 training unit: either a weak batch whose labels are a licensed
/// multiset, or a batch of annotated samples.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainUnit {
    Weak(WeakBatch),
    Labeled(Vec<usize>),
}

impl TrainUnit {
    pub fn samples(&self) -> &[usize] {
        match self {
            TrainUnit::Weak(b) => &b.samples,
            TrainUnit::Labeled(idx) => idx,
        }
    }
}

/// Builds a node's stage-3 units: its weak batches plus its annotated samples
/// in consecutive chunks of `batch_size`.
pub fn train_units(weak: &[WeakBatch], stream: &[MultiModalSample], batch_size: usize) -> Vec<TrainUnit> {
    let labeled: Vec<usize> = (0..stream.len()).filter(|&i| stream[i].fine_label.is_some()).collect();
    weak.iter()
        .cloned()
        .map(TrainUnit::Weak)
        .chain(labeled.chunks(batch_size.max(1)).map(|c| TrainUnit::Labeled(c.to_vec())))
        .collect()
}

/// Class counts behind the balanced weights: licensed labels of the weak
/// batches plus annotations.
pub fn unit_class_counts(units: &[TrainUnit], stream: &[MultiModalSample], classes: usize) -> Option<ClassCounts> {
    let mut counts = vec![0; classes];
    for u in units {
        match u {
            TrainUnit::Weak(b) => b.label_multiset.iter().for_each(|&c| counts[c] += 1),
            TrainUnit::Labeled(idx) => idx.iter().filter_map(|&i| stream[i].fine_label).for_each(|c| counts[c] += 1),
        }
    }
    ClassCounts::new(counts).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakUpdate {
    pub node_id: u32,
    pub bundle: ModelBundle,
    pub modalities: Vec<Modality>,
    pub samples: usize,
}

/// Stage 3 on one node: trains the whole bundle on weak and labeled units with
/// `(1 - λ) · CE + λ · KD`, the teacher being the incoming global bundle.
pub fn local_weak_round<R: Rng + ?Sized>(
    node_id: u32,
    stream: &[MultiModalSample],
    units: &[TrainUnit],
    counts: Option<&ClassCounts>,
    global: &ModelBundle,
    modalities: &[Modality],
    params: &WeakParams,
    rng: &mut R,
) -> Result<RoundOutput<WeakUpdate>> {
    let Some(counts) = counts.filter(|_| !units.is_empty()) else {
        return Ok(RoundOutput::Skipped {
            reason: "no weak or labeled data".into(),
        });
    };
    if modalities.is_empty() {
        return Ok(RoundOutput::Skipped {
            reason: "no live sensors".into(),
        });
    }
    let lambda = params.kd.weight;
    let mut student = global.clone();
    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut step_rng = rng_for(rng.random(), &[]);
    let mut loss = f64::NAN;
    for _ in 0..params.epochs {
        order.shuffle(&mut step_rng);
        let mut total = 0.0;
        let mut seen = 0;
        for &u in &order {
            let unit = &units[u];
            let batch: Vec<&MultiModalSample> = unit.samples().iter().map(|&i| &stream[i]).collect();
            let inputs = batch_inputs(&batch, modalities)?;
            let trace = student.forward_trace(&inputs)?;
            let logits = trace.logits();
            let labels = match unit {
                TrainUnit::Weak(b) => permutation_ce_loss(logits, &b.label_multiset, params.permutation_budget, &mut step_rng)?.assignment,
                TrainUnit::Labeled(_) => batch.iter().map(|s| s.fine_label.expect("labeled unit")).collect(),
            };
            let (ce, ce_grad) = if params.balanced {
                balanced_ce(logits, &labels, counts)?
            } else {
                cross_entropy(logits, &labels)?
            };
            let (kd, kd_grad) = if lambda > 0.0 {
                kd_loss(logits, &global.logits(&inputs)?, &params.kd)?
            } else {
                (0.0, Tensor::zeros(logits.rows(), logits.cols()))
            };
            let mut grad = ce_grad;
            for (g, k) in grad.values_mut().iter_mut().zip(kd_grad.values()) {
                *g = (1.0 - lambda) * *g + lambda * k;
            }
            let grads = student.backward(&trace, &grad)?;
            student.apply(&grads, params.learning_rate)?;
            total += combined_weak_stage_loss(ce, kd, lambda) * batch.len() as f64;
            seen += batch.len();
        }
        loss = total / seen.max(1) as f64;
    }
    let samples: usize = units.iter().map(|u| u.samples().len()).sum();
    Ok(RoundOutput::Trained {
        update: WeakUpdate {
            node_id,
            bundle: student,
            modalities: modalities.to_vec(),
            samples,
        },
        loss,
    })
}
