//! Stratified k-fold diagnosis with a small dense classifier.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::BiomarkerFeatureRow;
use crate::datagen::Group;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::nn::{Activation, DenseNet, Tensor};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosisTask {
    #[serde(rename = "nc_vs_mci")]
    NcVsMci,
    #[serde(rename = "nonad_vs_ad")]
    NonAdVsAd,
    #[serde(rename = "nc_mci_ad")]
    NcMciAd,
}

impl DiagnosisTask {
    pub const ALL: [DiagnosisTask; 3] = [DiagnosisTask::NcVsMci, DiagnosisTask::NonAdVsAd, DiagnosisTask::NcMciAd];

    pub fn name(self) -> &'static str {
        match self {
            DiagnosisTask::NcVsMci => "nc_vs_mci",
            DiagnosisTask::NonAdVsAd => "nonad_vs_ad",
            DiagnosisTask::NcMciAd => "nc_mci_ad",
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            DiagnosisTask::NcVsMci => vec!["NC", "MCI"],
            DiagnosisTask::NonAdVsAd => vec!["nonAD", "AD"],
            DiagnosisTask::NcMciAd => vec!["NC", "MCI", "AD"],
        }
    }

    /// Class of a subject under this task; None if the subject is not part of it.
    pub fn label(self, group: Group) -> Option<usize> {
        match (self, group) {
            (DiagnosisTask::NcVsMci, Group::Nc) => Some(0),
            (DiagnosisTask::NcVsMci, Group::Mci) => Some(1),
            (DiagnosisTask::NcVsMci, Group::Ad) => None,
            (DiagnosisTask::NonAdVsAd, Group::Ad) => Some(1),
            (DiagnosisTask::NonAdVsAd, _) => Some(0),
            (DiagnosisTask::NcMciAd, g) => Some(g as usize),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosisConfig {
    pub folds: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            hidden: 16,
            epochs: 300,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub task: DiagnosisTask,
    pub classes: Vec<String>,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
}

/// Fold of each subject: within each class, subjects sorted by id are shuffled
/// with the seed and dealt round-robin.
pub fn assign_folds(subject_ids: &[u32], labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Fold("need at least two folds".into()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut folds = vec![0; subject_ids.len()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < k {
            return Err(Error::Fold(format!("class {c} has {} subjects, fewer than {k} folds", members.len())));
        }
        members.sort_by_key(|&i| subject_ids[i]);
        members.shuffle(&mut rng_for(seed, &[c as u64]));
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

fn zscore_stats(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let sd = (0..d)
        .map(|j| {
            let v = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

fn standardize(xs: &[Vec<f64>], mean: &[f64], sd: &[f64]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(mean).zip(sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    Tensor::from_rows(&rows)
}

/// Trains on `x`/`y` with full-batch gradient descent and returns the net.
pub fn train_classifier(x: &Tensor, y: &[usize], classes: usize, cfg: &DiagnosisConfig, seed: u64) -> Result<DenseNet> {
    let mut rng = rng_for(seed, &[0]);
    let mut net = DenseNet::init(&[x.cols(), cfg.hidden, classes], Activation::Relu, Activation::Identity, &mut rng)?;
    for _ in 0..cfg.epochs {
        let trace = net.forward_trace(x)?;
        let (_, grad) = cross_entropy(trace.output(), y)?;
        let (grads, _) = net.backward_trace(&trace, &grad)?;
        net.apply_gradients(&grads, cfg.learning_rate)?;
    }
    Ok(net)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn diagnose_cv(rows: &[BiomarkerFeatureRow], task: DiagnosisTask, cfg: &DiagnosisConfig, seed: u64) -> Result<CvResult> {
    let used: Vec<(&BiomarkerFeatureRow, usize)> = rows.iter().filter_map(|r| task.label(r.group).map(|l| (r, l))).collect();
    let classes = task.class_names().len();
    if used.is_empty() {
        return Err(Error::Fold(format!("no subjects for task {}", task.name())));
    }
    let ids: Vec<u32> = used.iter().map(|(r, _)| r.subject_id).collect();
    let labels: Vec<usize> = used.iter().map(|&(_, l)| l).collect();
    for c in 0..classes {
        let n = labels.iter().filter(|&&l| l == c).count();
        if n < cfg.folds {
            return Err(Error::Fold(format!("{}: class {} has {n} subjects", task.name(), task.class_names()[c])));
        }
    }
    let folds = assign_folds(&ids, &labels, cfg.folds, seed)?;
    let features: Vec<Vec<f64>> = used.iter().map(|(r, _)| r.vector()).collect();
    let mut confusion = vec![vec![0; classes]; classes];
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..used.len()).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..used.len()).filter(|&i| folds[i] == fold).collect();
        let train_x: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let (mean, sd) = zscore_stats(&train_x);
        let x = standardize(&train_x, &mean, &sd)?;
        let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let net = train_classifier(&x, &y, classes, cfg, crate::rng::derive_seed(seed, &[1000 + fold as u64]))?;
        let test_x: Vec<Vec<f64>> = test.iter().map(|&i| features[i].clone()).collect();
        let logits = net.forward(&standardize(&test_x, &mean, &sd)?)?;
        for (r, &i) in test.iter().enumerate() {
            confusion[labels[i]][argmax(logits.row(r))] += 1;
        }
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(CvResult {
        task,
        classes: task.class_names().iter().map(|s| s.to_string()).collect(),
        accuracy: correct as f64 / used.len() as f64,
        confusion,
    })
}
