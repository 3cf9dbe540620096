use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Sequential,
    Pipelined,
}

/// Per-frame stage durations. Preprocessing of the modalities runs in a
/// parallel pool in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub collect_s: f64,
    pub preprocess_s: BTreeMap<Modality, f64>,
    pub infer_s: f64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            collect_s: 0.05,
            preprocess_s: [(Modality::Depth, 0.03), (Modality::Radar, 0.02), (Modality::Audio, 0.01)]
                .into_iter()
                .collect(),
            infer_s: 0.1058,
        }
    }
}

impl PipelineSpec {
    pub fn uniform_preprocess(collect_s: f64, preprocess_s: f64, infer_s: f64) -> Self {
        Self {
            collect_s,
            preprocess_s: Modality::ALL.iter().map(|&m| (m, preprocess_s)).collect(),
            infer_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.collect_s, self.infer_s].into_iter().chain(self.preprocess_s.values().copied());
        for v in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter("stage durations must be positive".into()));
            }
        }
        if self.preprocess_s.is_empty() {
            return Err(Error::Parameter("at least one preprocessing stage is needed".into()));
        }
        Ok(())
    }

    pub fn preprocess_max(&self) -> f64 {
        self.preprocess_s.values().copied().fold(0.0, f64::max)
    }
}

/// Steady-state frames per second.
pub fn pipeline_throughput(spec: &PipelineSpec, mode: PipelineMode) -> Result<f64> {
    spec.validate()?;
    let pre = spec.preprocess_max();
    Ok(match mode {
        PipelineMode::Sequential => 1.0 / (spec.collect_s + pre + spec.infer_s),
        PipelineMode::Pipelined => 1.0 / spec.collect_s.max(pre).max(spec.infer_s),
    })
}
