use serde::{Deserialize, Serialize};

use super::bundle::{batch_inputs, ModelBundle};
use crate::datagen::{ClassDistribution, MultiModalSample};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::stats::argmax;

/// Number of head (and tail) classes.
pub const HEAD_TAIL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Accuracy per class; None for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    pub support: Vec<usize>,
    pub head_classes: Vec<usize>,
    pub tail_classes: Vec<usize>,
    pub head_acc: Option<f64>,
    pub tail_acc: Option<f64>,
}

fn group_accuracy(classes: &[usize], correct: &[usize], support: &[usize]) -> Option<f64> {
    let n: usize = classes.iter().map(|&c| support[c]).sum();
    (n > 0).then(|| classes.iter().map(|&c| correct[c]).sum::<usize>() as f64 / n as f64)
}

/// Scores predictions. Head classes are the [`HEAD_TAIL`] most frequent in
/// `train_counts`, tail classes the least frequent (ties by class index).
pub fn evaluate_predictions(predictions: &[usize], labels: &[usize], train_counts: &ClassDistribution) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    let c = train_counts.counts.len();
    if labels.iter().chain(predictions).any(|&y| y >= c) {
        return Err(Error::shape(format!("class index outside {c} classes")));
    }
    let mut support = vec![0; c];
    let mut correct = vec![0; c];
    for (&p, &y) in predictions.iter().zip(labels) {
        support[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let ranked = train_counts.ranked();
    let k = HEAD_TAIL.min(c / 2).max(1);
    let head_classes = ranked[..k].to_vec();
    let tail_classes = ranked[c - k..].to_vec();
    Ok(Evaluation {
        accuracy: correct.iter().sum::<usize>() as f64 / labels.len() as f64,
        per_class: (0..c).map(|i| (support[i] > 0).then(|| correct[i] as f64 / support[i] as f64)).collect(),
        head_acc: group_accuracy(&head_classes, &correct, &support),
        tail_acc: group_accuracy(&tail_classes, &correct, &support),
        support,
        head_classes,
        tail_classes,
    })
}

pub fn predict(bundle: &ModelBundle, samples: &[MultiModalSample], modalities: &[Modality]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&MultiModalSample> = chunk.iter().collect();
        let logits = bundle.logits(&batch_inputs(&refs, modalities)?)?;
        out.extend((0..logits.rows()).map(|i| argmax(logits.row(i))));
    }
    Ok(out)
}

pub fn evaluate(
    bundle: &ModelBundle,
    test: &[MultiModalSample],
    modalities: &[Modality],
    train_counts: &ClassDistribution,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let labels: Vec<usize> = test
        .iter()
        .map(|s| s.fine_label.ok_or_else(|| Error::Data("test sample without a label".into())))
        .collect::<Result<_>>()?;
    evaluate_predictions(&predict(bundle, test, modalities)?, &labels, train_counts)
}
