//! Experiment configuration.
//!
//! Every section and key is optional; omitted values take the defaults below.
//! Unknown keys are rejected with the line and column of the offending key.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::activities::{ActivityTable, ClassSet};
use crate::datagen::{Group, SelectionPolicy};
use crate::error::{Error, Result};
use crate::fl::ModelSpec;
use crate::modality::Modality;
use crate::stats::AnalysisConfig;
use crate::sysim::{NetworkParams, PipelineSpec, SensorFailureProcess, TraceParams};
use crate::weak::WeakLabelMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Fine class ids (1-based rows of the activity table) used as the local
    /// label space, most common first.
    pub classes: Vec<u32>,
    /// Coarse label → fine class ids; replaces the built-in map when present.
    pub weak_map: Option<BTreeMap<String, Vec<u32>>>,
    pub data: DataConfig,
    pub roster: RosterConfig,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    pub supervised: SupervisedConfig,
    pub unsupervised: UnsupervisedConfig,
    pub weak: WeakConfig,
    pub system: SystemConfig,
    pub network: NetworkParams,
    pub trace: TraceParams,
    pub failures: FailureConfig,
    pub pipeline: PipelineSpec,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            classes: ActivityTable::builtin().desk_classes,
            weak_map: None,
            data: DataConfig::default(),
            roster: RosterConfig::default(),
            model: ModelSpec::default(),
            pretrain: PretrainConfig::default(),
            supervised: SupervisedConfig::default(),
            unsupervised: UnsupervisedConfig::default(),
            weak: WeakConfig::default(),
            system: SystemConfig::default(),
            network: NetworkParams::default(),
            trace: TraceParams::default(),
            failures: FailureConfig::default(),
            pipeline: PipelineSpec::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Standard deviation of the per-feature Gaussian noise around prototypes.
    pub noise_sigma: f64,
    pub duration_days: f64,
    pub selection: SelectionPolicy,
    /// Balanced held-out samples per class for each node's test set.
    pub test_per_class: usize,
    pub episode_min_s: f64,
    pub episode_max_s: f64,
    pub max_session_episodes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 2.0,
            duration_days: 3.0,
            selection: SelectionPolicy::default(),
            test_per_class: 25,
            episode_min_s: 60.0,
            episode_max_s: 600.0,
            max_session_episodes: 4,
        }
    }
}

/// Per-subject settings that replace the generated roster's values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectOverride {
    pub subject_id: u32,
    pub group: Option<Group>,
    pub dirichlet_alpha: Option<f64>,
    pub label_fraction: Option<f64>,
    pub log_fraction: Option<f64>,
    pub activity_richness: Option<usize>,
    pub modalities: Option<Vec<Modality>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosterConfig {
    /// Nodes; groups cycle NC, MCI, AD by subject id.
    pub nodes: usize,
    pub dirichlet_alpha: f64,
    pub label_fraction: f64,
    pub log_fraction: f64,
    pub absence_fraction: f64,
    /// Probability that a node lacks one (random) sensor.
    pub missing_modality_fraction: f64,
    /// Classes with nonzero mass: all for NC, minus this many for MCI and
    /// twice this many for AD.
    pub richness_step: usize,
    /// Mass multiplier on sedentary classes for AD subjects.
    pub ad_sedentary_tilt: f64,
    /// Fine ids counted as sedentary.
    pub sedentary_classes: Vec<u32>,
    pub subjects: Vec<SubjectOverride>,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            nodes: 20,
            dirichlet_alpha: 0.5,
            label_fraction: 0.02,
            log_fraction: 0.6,
            absence_fraction: 0.1,
            missing_modality_fraction: 0.2,
            richness_step: 1,
            ad_sedentary_tilt: 3.0,
            sedentary_classes: vec![19],
            subjects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Subjects whose fully labeled data forms the server pool.
    pub server_subjects: usize,
    pub per_class: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 16,
            server_subjects: 2,
            per_class: 5,
        }
    }
}

/// The supervised-only baseline: FedAvg from the pre-trained model using only
/// annotated samples, with plain cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_epochs: 3,
            learning_rate: 0.05,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsupervisedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    /// Fraction of live nodes taking part in each round.
    pub participation: f64,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_epochs: 1,
            learning_rate: 0.05,
            batch_size: 16,
            temperature: 0.1,
            participation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub permutation_budget: usize,
    pub kd_temperature: f64,
    pub kd_weight: f64,
    /// Inverse-frequency class weights; false gives plain cross-entropy.
    pub balanced: bool,
    pub participation: f64,
}

impl Default for WeakConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_epochs: 3,
            learning_rate: 0.05,
            batch_size: 16,
            permutation_budget: 32,
            kd_temperature: 2.0,
            kd_weight: 0.5,
            balanced: true,
            participation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Simulated local compute per sample per epoch.
    pub compute_s_per_sample: f64,
    /// Time of day at which stage 2 starts, in hours.
    pub start_hour: f64,
    /// Upload/broadcast size used by the standalone network simulation: a
    /// full-size model rather than the shrunken one trained here.
    pub netsim_payload_bytes: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            compute_s_per_sample: 0.05,
            start_hour: 0.0,
            netsim_payload_bytes: 75_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureConfig {
    /// Remove failed sensors from a node's training for rounds they are down.
    pub enabled: bool,
    pub rate_min_per_day: f64,
    pub rate_max_per_day: f64,
    pub repair_min_s: f64,
    pub repair_max_s: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        let p = SensorFailureProcess::default();
        Self {
            enabled: true,
            rate_min_per_day: p.rate_min_per_day,
            rate_max_per_day: p.rate_max_per_day,
            repair_min_s: p.repair_min_s,
            repair_max_s: p.repair_max_s,
        }
    }
}

impl FailureConfig {
    pub fn process(&self) -> SensorFailureProcess {
        SensorFailureProcess {
            rate_min_per_day: self.rate_min_per_day,
            rate_max_per_day: self.rate_max_per_day,
            repair_min_s: self.repair_min_s,
            repair_max_s: self.repair_max_s,
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1]")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::from_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, for callers that adjust values first.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, &e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn class_set(&self, table: &ActivityTable) -> Result<ClassSet> {
        ClassSet::new(table, self.classes.clone())
    }

    pub fn weak_label_map(&self, table: &ActivityTable) -> Result<WeakLabelMap> {
        match &self.weak_map {
            Some(map) => WeakLabelMap::new(table, map.clone()),
            None => Ok(WeakLabelMap::builtin()),
        }
    }

    /// The model spec with the class count filled in.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            num_classes: self.classes.len(),
            ..self.model
        }
    }

    pub fn validate(&self) -> Result<()> {
        let table = ActivityTable::builtin();
        let classes = self.class_set(&table)?;
        if classes.len() < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        self.weak_label_map(&table)?;
        self.model_spec().validate()?;

        let d = &self.data;
        if !(d.noise_sigma >= 0.0) {
            return Err(Error::Config("data.noise_sigma must be >= 0".into()));
        }
        check_rate("data.duration_days", d.duration_days)?;
        d.selection.validate()?;
        if !(d.episode_min_s > 0.0 && d.episode_min_s <= d.episode_max_s) || d.max_session_episodes == 0 {
            return Err(Error::Config("data episode bounds must satisfy 0 < min <= max and sessions >= 1".into()));
        }
        if d.test_per_class == 0 {
            return Err(Error::Config("data.test_per_class must be >= 1".into()));
        }

        let r = &self.roster;
        if r.nodes == 0 {
            return Err(Error::Config("roster.nodes must be >= 1".into()));
        }
        check_rate("roster.dirichlet_alpha", r.dirichlet_alpha)?;
        check_rate("roster.ad_sedentary_tilt", r.ad_sedentary_tilt)?;
        for (n, v) in [
            ("roster.label_fraction", r.label_fraction),
            ("roster.log_fraction", r.log_fraction),
            ("roster.absence_fraction", r.absence_fraction),
            ("roster.missing_modality_fraction", r.missing_modality_fraction),
        ] {
            check_unit(n, v)?;
        }
        if r.absence_fraction >= 1.0 {
            return Err(Error::Config("roster.absence_fraction must be < 1".into()));
        }
        if 2 * r.richness_step >= classes.len() {
            return Err(Error::Config("roster.richness_step leaves AD subjects without classes".into()));
        }
        for s in &r.subjects {
            if s.subject_id as usize >= r.nodes {
                return Err(Error::Config(format!("roster override for unknown subject {}", s.subject_id)));
            }
        }

        let p = &self.pretrain;
        check_rate("pretrain.learning_rate", p.learning_rate)?;
        if p.batch_size == 0 || p.server_subjects == 0 || p.per_class == 0 {
            return Err(Error::Config("pretrain batch size, server subjects and per_class must be >= 1".into()));
        }
        check_rate("supervised.learning_rate", self.supervised.learning_rate)?;
        if self.supervised.batch_size == 0 {
            return Err(Error::Config("supervised.batch_size must be >= 1".into()));
        }
        let u = &self.unsupervised;
        check_rate("unsupervised.learning_rate", u.learning_rate)?;
        check_rate("unsupervised.temperature", u.temperature)?;
        if u.batch_size < 2 {
            return Err(Error::Config("unsupervised.batch_size must be >= 2".into()));
        }
        if !(u.participation > 0.0 && u.participation <= 1.0) {
            return Err(Error::Config("unsupervised.participation must lie in (0, 1]".into()));
        }
        let w = &self.weak;
        check_rate("weak.learning_rate", w.learning_rate)?;
        check_rate("weak.kd_temperature", w.kd_temperature)?;
        check_unit("weak.kd_weight", w.kd_weight)?;
        if w.batch_size == 0 {
            return Err(Error::Config("weak.batch_size must be >= 1".into()));
        }
        if !(w.participation > 0.0 && w.participation <= 1.0) {
            return Err(Error::Config("weak.participation must lie in (0, 1]".into()));
        }
        if !(self.system.compute_s_per_sample >= 0.0) || !(0.0..24.0).contains(&self.system.start_hour) {
            return Err(Error::Config("system.compute_s_per_sample must be >= 0 and start_hour in [0, 24)".into()));
        }
        if self.system.netsim_payload_bytes == 0 {
            return Err(Error::Config("system.netsim_payload_bytes must be > 0".into()));
        }
        self.network.validate()?;
        self.trace.validate()?;
        self.failures.process().validate()?;
        self.pipeline.validate().map_err(|e| Error::Config(e.to_string()))?;
        check_unit("analysis.alpha", self.analysis.alpha)?;
        if self.analysis.diagnosis.folds < 2 || self.analysis.diagnosis.hidden == 0 {
            return Err(Error::Config("analysis.diagnosis needs >= 2 folds and a hidden layer".into()));
        }
        Ok(())
    }
}

/// Converts a TOML error into a line/column anchored parse error.
pub(crate) fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => line_col(text, span.start),
        None => (1, 1),
    };
    Error::Parse {
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}
