//! The biomarker pipeline: Box-Cox per feature, Levene check, ANOVA,
//! critical-feature selection and the diagnosis tasks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boxcox::{boxcox_apply, boxcox_fit};
use super::diagnose::{diagnose_cv, CvResult, DiagnosisConfig, DiagnosisTask};
use super::features::BiomarkerFeatureRow;
use super::tests::{levene_test, oneway_anova};
use crate::datagen::Group;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub diagnosis: DiagnosisConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            diagnosis: DiagnosisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub feature: String,
    pub lambda: Option<f64>,
    pub levene_w: Option<f64>,
    pub levene_p: Option<f64>,
    pub f: Option<f64>,
    pub p: Option<f64>,
    pub critical: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub tests: Vec<FeatureTest>,
    pub mean_levene_p: Option<f64>,
    /// Mean Levene p at or below 0.05: equal variances are doubtful.
    pub levene_warning: bool,
    pub critical: Vec<String>,
    pub diagnosis: Vec<CvResult>,
    pub skipped_tasks: Vec<(String, String)>,
}

fn test_feature(name: &str, values: &[f64], groups: &[Group], alpha: f64) -> Result<FeatureTest> {
    let mut t = FeatureTest {
        feature: name.to_string(),
        lambda: None,
        levene_w: None,
        levene_p: None,
        f: None,
        p: None,
        critical: false,
        note: String::new(),
    };
    let fit = match boxcox_fit(values) {
        Ok(fit) => fit,
        Err(Error::Degenerate(_)) => {
            t.note = "degenerate: constant feature".into();
            return Ok(t);
        }
        Err(e) => return Err(e),
    };
    t.lambda = Some(fit.lambda);
    let y = boxcox_apply(values, &fit)?;
    let split: Vec<Vec<f64>> = Group::ALL
        .iter()
        .map(|g| y.iter().zip(groups).filter(|(_, h)| *h == g).map(|(v, _)| *v).collect())
        .filter(|v: &Vec<f64>| !v.is_empty())
        .collect();
    let lev = levene_test(&split)?;
    t.levene_w = Some(lev.w);
    t.levene_p = Some(lev.p_value);
    match oneway_anova(&split) {
        Ok(r) => {
            t.f = Some(r.f);
            t.p = Some(r.p_value);
            t.critical = r.p_value < alpha;
        }
        Err(Error::Degenerate(msg)) => t.note = format!("degenerate: {msg}"),
        Err(e) => return Err(e),
    }
    Ok(t)
}

pub fn analyze(rows: &[BiomarkerFeatureRow], names: &[String], cfg: &AnalysisConfig, seed: u64) -> Result<AnalysisOutput> {
    let present: Vec<Group> = Group::ALL
        .iter()
        .copied()
        .filter(|g| rows.iter().any(|r| r.group == *g))
        .collect();
    if present.len() < 2 {
        return Err(Error::Data("need subjects from at least two groups".into()));
    }
    let dim = names.len();
    if rows.iter().any(|r| r.vector().len() != dim) {
        return Err(Error::shape("feature rows do not match the feature names"));
    }
    let vectors: Vec<Vec<f64>> = rows.iter().map(|r| r.vector()).collect();
    let groups: Vec<Group> = rows.iter().map(|r| r.group).collect();
    let tests: Vec<FeatureTest> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let values: Vec<f64> = vectors.iter().map(|v| v[j]).collect();
            test_feature(&names[j], &values, &groups, cfg.alpha)
        })
        .collect::<Result<_>>()?;
    let lev: Vec<f64> = tests.iter().filter_map(|t| t.levene_p).collect();
    let mean_levene_p = (!lev.is_empty()).then(|| lev.iter().sum::<f64>() / lev.len() as f64);
    let critical = tests.iter().filter(|t| t.critical).map(|t| t.feature.clone()).collect();
    let mut diagnosis = Vec::new();
    let mut skipped_tasks = Vec::new();
    for task in DiagnosisTask::ALL {
        match diagnose_cv(rows, task, &cfg.diagnosis, seed) {
            Ok(r) => diagnosis.push(r),
            Err(Error::Fold(msg)) => skipped_tasks.push((task.name().to_string(), msg)),
            Err(e) => return Err(e),
        }
    }
    Ok(AnalysisOutput {
        tests,
        mean_levene_p,
        levene_warning: mean_levene_p.is_some_and(|p| p <= 0.05),
        critical,
        diagnosis,
        skipped_tasks,
    })
}
