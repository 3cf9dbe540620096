use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;

/// Diagnosis group of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "NC")]
    Nc,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "AD")]
    Ad,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Nc, Group::Mci, Group::Ad];

    pub fn name(self) -> &'static str {
        match self {
            Group::Nc => "NC",
            Group::Mci => "MCI",
            Group::Ad => "AD",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NC" => Ok(Group::Nc),
            "MCI" => Ok(Group::Mci),
            "AD" => Ok(Group::Ad),
            other => Err(Error::Data(format!("unknown group `{other}`"))),
        }
    }
}

/// Per-modality diagonal affine map `x -> scale * x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineShift {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineShift {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            offset: vec![0.0; dim],
        }
    }

    /// Scale uniform in `[0.5, 2.0]`, offset uniform in `[-1, 1]`, per feature.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let scale = (0..dim).map(|_| rng.random_range(0.5..=2.0)).collect();
        let offset = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self { scale, offset }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, s), o) in x.iter_mut().zip(&self.scale).zip(&self.offset) {
            *v = s * *v + o;
        }
    }
}

pub type DomainShift = BTreeMap<Modality, AffineShift>;

pub fn identity_shift() -> DomainShift {
    Modality::ALL.iter().map(|&m| (m, AffineShift::identity(m.input_dim()))).collect()
}

pub fn random_shift<R: Rng + ?Sized>(rng: &mut R) -> DomainShift {
    Modality::ALL.iter().map(|&m| (m, AffineShift::random(m.input_dim(), rng))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: u32,
    pub group: Group,
    pub dirichlet_alpha: f64,
    pub domain_shift: DomainShift,
    pub available_modalities: Vec<Modality>,
    pub label_fraction: f64,
    /// Number of classes (from the front of the class set) with nonzero mass.
    pub activity_richness: usize,
    /// Multiplicative class-mass tilt applied after the Dirichlet draw.
    pub class_tilt: Vec<f64>,
    /// Probability that a coarse session is written to the activity log.
    pub log_fraction: f64,
    /// Fraction of episodes with nobody in view.
    pub absence_fraction: f64,
}

impl SubjectProfile {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::Config(format!(
                "subject {}: dirichlet_alpha must be positive",
                self.subject_id
            )));
        }
        for (name, v) in [
            ("label_fraction", self.label_fraction),
            ("log_fraction", self.log_fraction),
            ("absence_fraction", self.absence_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("subject {}: {name} must lie in [0, 1]", self.subject_id)));
            }
        }
        if self.activity_richness == 0 || self.activity_richness > num_classes {
            return Err(Error::Config(format!(
                "subject {}: activity_richness must lie in 1..={num_classes}",
                self.subject_id
            )));
        }
        if self.available_modalities.is_empty() {
            return Err(Error::Config(format!("subject {}: no modalities", self.subject_id)));
        }
        if self.class_tilt.len() != num_classes || self.class_tilt.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config(format!(
                "subject {}: class_tilt needs {num_classes} positive entries",
                self.subject_id
            )));
        }
        for m in &self.available_modalities {
            let s = self
                .domain_shift
                .get(m)
                .ok_or_else(|| Error::Config(format!("subject {}: no shift for {m}", self.subject_id)))?;
            if s.scale.len() != m.input_dim() || s.offset.len() != m.input_dim() {
                return Err(Error::Config(format!("subject {}: shift for {m} has wrong width", self.subject_id)));
            }
        }
        Ok(())
    }

    pub fn has(&self, m: Modality) -> bool {
        self.available_modalities.contains(&m)
    }
}
