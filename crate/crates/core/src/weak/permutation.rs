//! Cross-entropy minimized over assignments of a licensed label multiset to the
//! samples of a batch.
//!
//! The identity assignment is always evaluated. Batches of at most
//! [`EXHAUSTIVE_MAX`] samples enumerate every distinct arrangement of the
//! multiset; larger batches evaluate up to `budget` distinct sampled
//! arrangements.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::nn::Tensor;

pub const EXHAUSTIVE_MAX: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationLoss {
    pub loss: f64,
    pub grad: Tensor,
    /// Label assigned to each sample by the minimizing arrangement.
    pub assignment: Vec<usize>,
    /// Number of arrangements evaluated, identity included.
    pub evaluated: usize,
}

/// Rearranges `v` into the next lexicographic permutation; false when `v` was
/// the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn factorial_saturating(n: usize) -> usize {
    (1..=n).fold(1usize, |acc, k| acc.saturating_mul(k))
}

pub fn permutation_ce_loss<R: Rng + ?Sized>(
    logits: &Tensor,
    label_multiset: &[usize],
    budget: usize,
    rng: &mut R,
) -> Result<PermutationLoss> {
    logits.ensure_matrix("permutation_ce_loss")?;
    let batch = logits.rows();
    let classes = logits.cols();
    if label_multiset.len() != batch {
        return Err(Error::shape(format!(
            "{} licensed labels for a batch of {batch}",
            label_multiset.len()
        )));
    }
    if let Some(&bad) = label_multiset.iter().find(|&&y| y >= classes) {
        return Err(Error::shape(format!("label {bad} outside {classes} classes")));
    }
    // nll[i * C + c] = -log softmax(z_i)_c
    let mut nll = vec![0.0; batch * classes];
    let mut probs = Vec::with_capacity(batch);
    for i in 0..batch {
        let p = softmax(logits.row(i), 1.0);
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for c in 0..classes {
            nll[i * classes + c] = lse - row[c];
        }
        probs.push(p);
    }
    let cost = |labels: &[usize]| -> f64 {
        labels.iter().enumerate().map(|(i, &c)| nll[i * classes + c]).sum::<f64>() / batch as f64
    };

    let identity = label_multiset.to_vec();
    let mut best = identity.clone();
    let mut best_cost = cost(&identity);
    let mut evaluated = 1;
    let consider = |labels: &[usize], best: &mut Vec<usize>, best_cost: &mut f64| {
        let c = cost(labels);
        if c < *best_cost {
            *best_cost = c;
            best.copy_from_slice(labels);
        }
    };

    if batch <= EXHAUSTIVE_MAX {
        let mut perm = identity.clone();
        perm.sort_unstable();
        loop {
            if perm != identity {
                consider(&perm, &mut best, &mut best_cost);
                evaluated += 1;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
    } else {
        let target = budget.min(factorial_saturating(batch) - 1);
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        seen.insert(identity.clone());
        let mut attempts = 0;
        let mut perm = identity.clone();
        while seen.len() - 1 < target && attempts < 20 * target.max(1) {
            attempts += 1;
            perm.shuffle(rng);
            if seen.insert(perm.clone()) {
                consider(&perm, &mut best, &mut best_cost);
                evaluated += 1;
            }
        }
    }

    let mut grad = Tensor::zeros(batch, classes);
    for (i, &y) in best.iter().enumerate() {
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = (probs[i][c] - if c == y { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok(PermutationLoss {
        loss: best_cost,
        grad,
        assignment: best,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::cross_entropy;
    use crate::rng::rng_for;

    #[test]
    fn next_permutation_enumerates_multiset() {
        let mut v = vec![0, 0, 1, 1];
        let mut count = 1;
        while next_permutation(&mut v) {
            count += 1;
        }
        assert_eq!(count, 6);
    }

    #[test]
    fn single_sample_is_plain_ce() {
        let logits = Tensor::from_rows(&[vec![0.3, -0.2, 1.0]]).unwrap();
        let mut rng = rng_for(0, &[0]);
        let p = permutation_ce_loss(&logits, &[1], 32, &mut rng).unwrap();
        let (ce, g) = cross_entropy(&logits, &[1]).unwrap();
        assert!((p.loss - ce).abs() < 1e-15);
        for (a, b) in p.grad.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn swapped_pair_is_recovered() {
        // Sample 0 looks like class 0 (A), sample 1 like class 1 (B); license {B, A}.
        let logits = Tensor::from_rows(&[vec![5.0, -5.0], vec![-5.0, 5.0]]).unwrap();
        let mut rng = rng_for(0, &[0]);
        let p = permutation_ce_loss(&logits, &[1, 0], 32, &mut rng).unwrap();
        assert_eq!(p.assignment, vec![0, 1]);
        let (ce, _) = cross_entropy(&logits, &[0, 1]).unwrap();
        assert!((p.loss - ce).abs() < 1e-15);
        assert_eq!(p.evaluated, 2);
    }

    #[test]
    fn size_mismatch() {
        let logits = Tensor::zeros(3, 2);
        let mut rng = rng_for(0, &[0]);
        assert!(matches!(
            permutation_ce_loss(&logits, &[0, 1], 4, &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sampled_budget_is_respected() {
        let mut rng = rng_for(3, &[0]);
        let logits = Tensor::matrix(8, 4, (0..32).map(|i| ((i * 7) % 5) as f64 * 0.3).collect()).unwrap();
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let p = permutation_ce_loss(&logits, &labels, 10, &mut rng).unwrap();
        assert_eq!(p.evaluated, 11);
        let same = vec![2; 8];
        let q = permutation_ce_loss(&logits, &same, 10, &mut rng).unwrap();
        assert_eq!(q.evaluated, 1);
    }
}
