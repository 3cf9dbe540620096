//! Synthetic detection timelines with a known group effect, for checking the
//! analysis end to end.
//!
//! Subjects come in matched triples: the j-th NC, MCI and AD subjects share one
//! activity pattern, so every feature has identical values across groups except
//! where the effect is planted. The effect lengthens episodes of one class into
//! the unobserved gap that follows them, which changes that class's duration
//! and nothing else.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::Detection;
use crate::datagen::Group;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub subjects_per_group: usize,
    pub num_classes: usize,
    pub episodes: usize,
    /// Class whose duration differs by group; None for a null cohort.
    pub planted_class: Option<usize>,
    /// Fraction of the following gap filled for AD subjects (half for MCI).
    pub effect: f64,
    pub period_s: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            subjects_per_group: 12,
            num_classes: 8,
            episodes: 150,
            planted_class: Some(2),
            effect: 0.9,
            period_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSubject {
    pub subject_id: u32,
    pub group: Group,
    pub timeline: Vec<Detection>,
}

#[derive(Debug, Clone)]
struct Episode {
    class: usize,
    len: usize,
    gap: usize,
}

fn pattern(cfg: &CohortConfig, seed: u64, j: usize) -> Vec<Episode> {
    let mut rng = rng_for(seed, &[j as u64]);
    let weights: Vec<f64> = (0..cfg.num_classes).map(|_| rng.random_range(0.5..1.0)).collect();
    let total: f64 = weights.iter().sum();
    (0..cfg.episodes)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut class = cfg.num_classes - 1;
            for (c, w) in weights.iter().enumerate() {
                if u < *w {
                    class = c;
                    break;
                }
                u -= w;
            }
            Episode {
                class,
                len: rng.random_range(5..=30),
                gap: rng.random_range(4..=20),
            }
        })
        .collect()
}

fn render(episodes: &[Episode], cfg: &CohortConfig, effect: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    let mut slot = 0usize;
    let last = episodes.len() - 1;
    for (e, ep) in episodes.iter().enumerate() {
        let extend = if cfg.planted_class == Some(ep.class) && e < last {
            ((effect * ep.gap as f64).floor() as usize).min(ep.gap - 1)
        } else {
            0
        };
        for _ in 0..ep.len + extend {
            out.push(Detection {
                t_s: slot as f64 * cfg.period_s,
                class: ep.class,
            });
            slot += 1;
        }
        slot += ep.gap - extend;
    }
    out
}

pub fn planted_cohort(cfg: &CohortConfig, seed: u64) -> Result<Vec<CohortSubject>> {
    if cfg.subjects_per_group < 2 || cfg.num_classes < 1 || cfg.episodes < 2 {
        return Err(Error::Config("cohort needs >= 2 subjects per group, >= 1 class and >= 2 episodes".into()));
    }
    if cfg.planted_class.is_some_and(|k| k >= cfg.num_classes) || !(0.0..1.0).contains(&cfg.effect) {
        return Err(Error::Config("planted class out of range or effect outside [0, 1)".into()));
    }
    let mut subjects = Vec::new();
    for (gi, &group) in Group::ALL.iter().enumerate() {
        let effect = match group {
            Group::Nc => 0.0,
            Group::Mci => cfg.effect / 2.0,
            Group::Ad => cfg.effect,
        };
        for j in 0..cfg.subjects_per_group {
            let episodes = pattern(cfg, seed, j);
            subjects.push(CohortSubject {
                subject_id: (gi * cfg.subjects_per_group + j) as u32,
                group,
                timeline: render(&episodes, cfg, effect),
            });
        }
    }
    Ok(subjects)
}
