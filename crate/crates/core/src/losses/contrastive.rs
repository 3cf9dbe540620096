//! Fusion-based feature augmentation and the contrastive fusion loss.
//!
//! Each source sample is turned into `P` fused views (one per recipe). Views of
//! the same sample are positives for each other; every other view is a negative.
//! For view `s` with positive set `P(s)`:
//!
//! ```text
//! L = sum_s  -1/|P(s)|  sum_{p in P(s)}  log( exp(v_s.v_p / tau) / sum_{a != s} exp(v_s.v_a / tau) )
//! ```

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{l2_normalize, l2_normalize_backward, Tensor};

/// One way of turning per-modality embeddings into a fused view.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionRecipe {
    /// Concatenate embeddings of all modalities in canonical order (absent
    /// modalities contribute zeros), then multiply by a fixed `(d, 3d)` matrix.
    ConcatProject { projection: Tensor },
    /// Weighted sum of the named modalities' embeddings.
    WeightedSum { weights: BTreeMap<Modality, f64> },
}

impl FusionRecipe {
    pub fn weighted(weights: &[(Modality, f64)]) -> Self {
        FusionRecipe::WeightedSum {
            weights: weights.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub recipes: Vec<FusionRecipe>,
}

impl ContrastiveConfig {
    pub fn new(temperature: f64, recipes: Vec<FusionRecipe>) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        if recipes.len() < 2 {
            return Err(Error::Config("at least two fusion recipes are needed".into()));
        }
        Ok(Self { temperature, recipes })
    }
}

/// The default recipe set for one round: concat-project, uniform weighted sum,
/// a random simplex draw and a one-hot on a random present modality.
pub fn default_recipes<R: Rng + ?Sized>(present: &[Modality], projection: &Tensor, rng: &mut R) -> Vec<FusionRecipe> {
    let uniform = 1.0 / present.len() as f64;
    let raw: Vec<f64> = present.iter().map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
    let total: f64 = raw.iter().sum();
    let pick = present[rng.random_range(0..present.len())];
    vec![
        FusionRecipe::ConcatProject {
            projection: projection.clone(),
        },
        FusionRecipe::WeightedSum {
            weights: present.iter().map(|&m| (m, uniform)).collect(),
        },
        FusionRecipe::WeightedSum {
            weights: present.iter().zip(&raw).map(|(&m, r)| (m, r / total)).collect(),
        },
        FusionRecipe::WeightedSum {
            weights: [(pick, 1.0)].into_iter().collect(),
        },
    ]
}

/// Seeded `(d, 3d)` projection for the concat recipe.
pub fn random_projection<R: Rng + ?Sized>(embed_dim: usize, rng: &mut R) -> Tensor {
    let fan_in = embed_dim * Modality::ALL.len();
    let bound = 1.0 / (fan_in as f64).sqrt();
    let vals = (0..embed_dim * fan_in).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(embed_dim, fan_in, vals).expect("positive dims")
}

/// `N * P` fused, unit-norm views, with row `i * P + r` the `r`-th view of
/// source sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureSet {
    features: Tensor,
    source_ids: Vec<usize>,
    fusions_per_sample: usize,
}

impl FusedFeatureSet {
    pub fn new(features: Tensor, source_ids: Vec<usize>, fusions_per_sample: usize) -> Result<Self> {
        features.ensure_matrix("fused features")?;
        if source_ids.len() != features.rows() {
            return Err(Error::shape("one source id per fused feature required"));
        }
        if fusions_per_sample < 2 {
            return Err(Error::Config("each sample needs at least two fused views".into()));
        }
        let mut per_source = BTreeMap::new();
        for &id in &source_ids {
            *per_source.entry(id).or_insert(0usize) += 1;
        }
        if per_source.values().any(|&c| c != fusions_per_sample) {
            return Err(Error::Config(format!(
                "every source sample must contribute exactly {fusions_per_sample} views"
            )));
        }
        Ok(Self {
            features,
            source_ids,
            fusions_per_sample,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    pub fn fusions_per_sample(&self) -> usize {
        self.fusions_per_sample
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    /// Same grouping with replaced features (used for gradient checks).
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(features, self.source_ids.clone(), self.fusions_per_sample)
    }
}

/// Output of [`fuse_features`] together with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub set: FusedFeatureSet,
    raw: Tensor,
    present: Vec<Modality>,
    embed_dim: usize,
}

fn check_embeddings(embeddings: &BTreeMap<Modality, Tensor>) -> Result<(usize, usize)> {
    let first = embeddings
        .values()
        .next()
        .ok_or_else(|| Error::Modality("no modality embeddings supplied".into()))?;
    let (n, d) = (first.rows(), first.cols());
    if embeddings.values().any(|e| e.rows() != n || e.cols() != d) {
        return Err(Error::shape("all modality embeddings must share N and d"));
    }
    Ok((n, d))
}

/// Builds the fused views of every sample under every recipe.
pub fn fuse_features(embeddings: &BTreeMap<Modality, Tensor>, recipes: &[FusionRecipe]) -> Result<Fusion> {
    let (n, d) = check_embeddings(embeddings)?;
    let p = recipes.len();
    for recipe in recipes {
        match recipe {
            FusionRecipe::WeightedSum { weights } => {
                if let Some(m) = weights.keys().find(|m| !embeddings.contains_key(m)) {
                    return Err(Error::Modality(format!("recipe references absent modality {m}")));
                }
            }
            FusionRecipe::ConcatProject { projection } => {
                if projection.rows() != d || projection.cols() != d * Modality::ALL.len() {
                    return Err(Error::shape("concat projection must be (d, 3d)"));
                }
            }
        }
    }
    let mut raw = Vec::with_capacity(n * p * d);
    let mut source_ids = Vec::with_capacity(n * p);
    let mut concat = vec![0.0; d * Modality::ALL.len()];
    for i in 0..n {
        for recipe in recipes {
            let mut v = vec![0.0; d];
            match recipe {
                FusionRecipe::WeightedSum { weights } => {
                    for (m, &w) in weights {
                        for (acc, x) in v.iter_mut().zip(embeddings[m].row(i)) {
                            *acc += w * x;
                        }
                    }
                }
                FusionRecipe::ConcatProject { projection } => {
                    concat.iter_mut().for_each(|x| *x = 0.0);
                    for (m, e) in embeddings {
                        concat[m.index() * d..(m.index() + 1) * d].copy_from_slice(e.row(i));
                    }
                    for (o, acc) in v.iter_mut().enumerate() {
                        *acc = projection.row(o).iter().zip(&concat).map(|(a, b)| a * b).sum();
                    }
                }
            }
            raw.extend(v);
            source_ids.push(i);
        }
    }
    let raw = Tensor::matrix(n * p, d, raw)?;
    let features = l2_normalize(&raw)?;
    Ok(Fusion {
        set: FusedFeatureSet::new(features, source_ids, p)?,
        raw,
        present: embeddings.keys().copied().collect(),
        embed_dim: d,
    })
}

impl Fusion {
    /// Gradients with respect to each present modality's embeddings, given the
    /// gradient with respect to the normalized fused features.
    pub fn backward(&self, recipes: &[FusionRecipe], grad_fused: &Tensor) -> Result<BTreeMap<Modality, Tensor>> {
        let grad_raw = l2_normalize_backward(&self.raw, grad_fused)?;
        let d = self.embed_dim;
        let p = recipes.len();
        let n = self.raw.rows() / p;
        let mut out: BTreeMap<Modality, Vec<f64>> = self.present.iter().map(|&m| (m, vec![0.0; n * d])).collect();
        for i in 0..n {
            for (r, recipe) in recipes.iter().enumerate() {
                let g = grad_raw.row(i * p + r);
                match recipe {
                    FusionRecipe::WeightedSum { weights } => {
                        for (m, &w) in weights {
                            let dst = &mut out.get_mut(m).expect("checked in forward")[i * d..(i + 1) * d];
                            dst.iter_mut().zip(g).for_each(|(a, b)| *a += w * b);
                        }
                    }
                    FusionRecipe::ConcatProject { projection } => {
                        for (m, buf) in out.iter_mut() {
                            let dst = &mut buf[i * d..(i + 1) * d];
                            for (o, &go) in g.iter().enumerate() {
                                let row = &projection.row(o)[m.index() * d..(m.index() + 1) * d];
                                dst.iter_mut().zip(row).for_each(|(a, w)| *a += go * w);
                            }
                        }
                    }
                }
            }
        }
        out.into_iter()
            .map(|(m, v)| Ok((m, Tensor::matrix(n, d, v)?)))
            .collect()
    }
}

/// Contrastive fusion loss and its gradient with respect to the fused features.
pub fn contrastive_fusion_loss(fs: &FusedFeatureSet, temperature: f64) -> Result<(f64, Tensor)> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let v = fs.features();
    let m = v.rows();
    let ids = fs.source_ids();
    let positives = fs.fusions_per_sample() - 1;
    if positives == 0 || m < 2 {
        return Err(Error::Config("every view needs at least one positive".into()));
    }
    // Scaled similarity matrix.
    let mut sim = vec![0.0; m * m];
    for s in 0..m {
        for a in s..m {
            let dot: f64 = v.row(s).iter().zip(v.row(a)).map(|(x, y)| x * y).sum::<f64>() / temperature;
            sim[s * m + a] = dot;
            sim[a * m + s] = dot;
        }
    }
    let mut loss = 0.0;
    // coeff[s][a] = dL/d(v_s . v_a) contribution from term s, already divided by tau.
    let mut coeff = vec![0.0; m * m];
    let inv_pos = 1.0 / positives as f64;
    for s in 0..m {
        let row = &sim[s * m..(s + 1) * m];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != s)
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != s)
            .map(|(_, &x)| (x - max).exp())
            .sum();
        let lse = max + denom.ln();
        let mut pos_sum = 0.0;
        for a in 0..m {
            if a == s {
                continue;
            }
            let q = (row[a] - max).exp() / denom;
            let is_pos = ids[a] == ids[s];
            if is_pos {
                pos_sum += row[a];
            }
            coeff[s * m + a] = (q - if is_pos { inv_pos } else { 0.0 }) / temperature;
        }
        loss += lse - inv_pos * pos_sum;
    }
    let d = v.cols();
    let mut grad = vec![0.0; m * d];
    for s in 0..m {
        for a in 0..m {
            let c = coeff[s * m + a];
            if c == 0.0 {
                continue;
            }
            let (vs, va) = (v.row(s), v.row(a));
            for k in 0..d {
                grad[s * d + k] += c * va[k];
                grad[a * d + k] += c * vs[k];
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Degenerate("contrastive loss is not finite".into()));
    }
    Ok((loss, Tensor::matrix(m, d, grad)?))
}
