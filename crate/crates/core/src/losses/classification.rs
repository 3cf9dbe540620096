//! Cross-entropy variants and knowledge distillation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Per-class sample counts on a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    counts: Vec<usize>,
}

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Count("at least one class needs a positive count".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0; classes];
        for &y in labels {
            *counts
                .get_mut(y)
                .ok_or_else(|| Error::Count(format!("label {y} outside {classes} classes")))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Normalized inverse-frequency weights over the classes with a positive
    /// count: `w_c = K (1/n_c) / sum_j (1/n_j)` with `K` present classes, so the
    /// weights of present classes sum to `K`. Absent classes get weight 0.
    pub fn balanced_weights(&self) -> Vec<f64> {
        let present: Vec<usize> = self.counts.iter().copied().filter(|&c| c > 0).collect();
        // Equal counts give unit weights exactly.
        if present.windows(2).all(|w| w[0] == w[1]) {
            return self.counts.iter().map(|&c| if c > 0 { 1.0 } else { 0.0 }).collect();
        }
        let k = present.len() as f64;
        let inv_sum: f64 = present.iter().map(|&c| 1.0 / c as f64).sum();
        self.counts
            .iter()
            .map(|&c| if c > 0 { k * (1.0 / c as f64) / inv_sum } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub temperature: f64,
    pub weight: f64,
}

impl KdConfig {
    pub fn new(temperature: f64, weight: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("KD temperature must be positive, got {temperature}")));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Config(format!("KD weight must lie in [0, 1], got {weight}")));
        }
        Ok(Self { temperature, weight })
    }
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            weight: 0.5,
        }
    }
}

/// Row-wise softmax of `row / temperature`.
pub fn softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of each row against its label, `-log softmax(z)_y`.
pub fn per_sample_ce(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            log_sum_exp(row) - row[labels[i]]
        })
        .collect())
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    logits.ensure_matrix("cross entropy")?;
    if labels.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::shape(format!("label {bad} outside {} classes", logits.cols())));
    }
    Ok(())
}

/// `(1/B) sum_i w_{y_i} CE_i` and its gradient with respect to the logits.
pub fn weighted_ce(logits: &Tensor, labels: &[usize], class_weights: &[f64]) -> Result<(f64, Tensor)> {
    check_labels(logits, labels)?;
    if class_weights.len() != logits.cols() {
        return Err(Error::shape("one weight per class required"));
    }
    let batch = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let y = labels[i];
        let w = class_weights[y];
        loss += w * (log_sum_exp(row) - row[y]);
        let p = softmax(row, 1.0);
        for (j, (g, pj)) in grad.row_mut(i).iter_mut().zip(p).enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            *g = w * (pj - target) / batch;
        }
    }
    Ok((loss / batch, grad))
}

/// Plain mean cross-entropy.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let ones = vec![1.0; logits.cols()];
    weighted_ce(logits, labels, &ones)
}

/// Cross-entropy reweighted by normalized inverse class frequency.
pub fn balanced_ce(logits: &Tensor, labels: &[usize], counts: &ClassCounts) -> Result<(f64, Tensor)> {
    if counts.num_classes() != logits.cols() {
        return Err(Error::Count(format!(
            "{} class counts for {} logits",
            counts.num_classes(),
            logits.cols()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y < counts.num_classes() && counts.counts()[y] == 0) {
        return Err(Error::Count(format!("label {y} belongs to a class with zero count")));
    }
    weighted_ce(logits, labels, &counts.balanced_weights())
}

/// `T^2 * mean_i KL(softmax(teacher_i/T) || softmax(student_i/T))` and its
/// gradient with respect to the student logits.
pub fn kd_loss(student: &Tensor, teacher: &Tensor, cfg: &KdConfig) -> Result<(f64, Tensor)> {
    student.ensure_matrix("kd_loss")?;
    if student.shape() != teacher.shape() {
        return Err(Error::shape(format!(
            "student {:?} and teacher {:?} logits differ in shape",
            student.shape(),
            teacher.shape()
        )));
    }
    let t = cfg.temperature;
    let batch = student.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(student.rows(), student.cols());
    for i in 0..student.rows() {
        let ps = softmax(student.row(i), t);
        let pt = softmax(teacher.row(i), t);
        let scaled_s: Vec<f64> = student.row(i).iter().map(|z| z / t).collect();
        let scaled_t: Vec<f64> = teacher.row(i).iter().map(|z| z / t).collect();
        let lse_s = log_sum_exp(&scaled_s);
        let lse_t = log_sum_exp(&scaled_t);
        let mut kl = 0.0;
        for j in 0..pt.len() {
            if pt[j] > 0.0 {
                let log_pt = scaled_t[j] - lse_t;
                let log_ps = scaled_s[j] - lse_s;
                kl += pt[j] * (log_pt - log_ps);
            }
        }
        loss += kl.max(0.0);
        for (g, (a, b)) in grad.row_mut(i).iter_mut().zip(ps.iter().zip(&pt)) {
            *g = t * (a - b) / batch;
        }
    }
    Ok((t * t * loss / batch, grad))
}

/// `(1 - lambda) * balanced + lambda * kd`.
pub fn combined_weak_stage_loss(balanced: f64, kd: f64, kd_weight: f64) -> f64 {
    (1.0 - kd_weight) * balanced + kd_weight * kd
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits() -> Tensor {
        Tensor::from_rows(&[vec![0.2, -1.0, 2.0], vec![1.5, 0.3, -0.7], vec![-0.2, 0.1, 0.4]]).unwrap()
    }

    #[test]
    fn uniform_counts_reduce_to_plain_ce_bitwise() {
        let labels = [2, 0, 1];
        let counts = ClassCounts::new(vec![5, 5, 5]).unwrap();
        assert_eq!(counts.balanced_weights(), vec![1.0; 3]);
        let (a, ga) = balanced_ce(&logits(), &labels, &counts).unwrap();
        let (b, gb) = cross_entropy(&logits(), &labels).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn two_class_weights() {
        let counts = ClassCounts::new(vec![1, 3]).unwrap();
        let w = counts.balanced_weights();
        assert!((w[0] - 1.5).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_count_classes_are_excluded() {
        let counts = ClassCounts::new(vec![0, 1, 3]).unwrap();
        let w = counts.balanced_weights();
        assert_eq!(w[0], 0.0);
        assert!((w[1] + w[2] - 2.0).abs() < 1e-12);
        assert!(matches!(
            balanced_ce(&logits(), &[0, 1, 2], &counts),
            Err(Error::Count(_))
        ));
        assert!(ClassCounts::new(vec![0, 0]).is_err());
    }

    #[test]
    fn kd_identical_is_zero() {
        let cfg = KdConfig::default();
        let (loss, grad) = kd_loss(&logits(), &logits(), &cfg).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(grad.values().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn kd_hand_value() {
        let student = Tensor::from_rows(&[vec![3f64.ln(), 0.0]]).unwrap();
        let teacher = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, _) = kd_loss(&student, &teacher, &KdConfig::new(1.0, 0.5).unwrap()).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kd_shape_mismatch() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 2);
        assert!(matches!(kd_loss(&a, &b, &KdConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn combined_mixes() {
        assert_eq!(combined_weak_stage_loss(2.0, 1.0, 0.0), 2.0);
        assert_eq!(combined_weak_stage_loss(2.0, 1.0, 1.0), 1.0);
        assert_eq!(combined_weak_stage_loss(2.0, 1.0, 0.5), 1.5);
    }

    #[test]
    fn kd_config_validation() {
        assert!(KdConfig::new(0.0, 0.5).is_err());
        assert!(KdConfig::new(1.0, 1.5).is_err());
    }
}
