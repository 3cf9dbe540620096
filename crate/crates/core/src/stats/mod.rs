//! Biomarker statistics: activity features, Box-Cox, Levene, one-way ANOVA,
//! critical-feature selection and cross-validated diagnosis.

mod analysis;
mod boxcox;
mod cohort;
mod diagnose;
mod features;
mod special;
mod tests;

pub use analysis::{analyze, AnalysisConfig, AnalysisOutput, FeatureTest};
pub use boxcox::{boxcox_apply, boxcox_fit, boxcox_transform, BoxCoxFit, BOXCOX_EPS};
pub use cohort::{planted_cohort, CohortConfig, CohortSubject};
pub use diagnose::{argmax, assign_folds, diagnose_cv, train_classifier, CvResult, DiagnosisConfig, DiagnosisTask};
pub use features::{extract_features, feature_names, parse_detections, write_detections, BiomarkerFeatureRow, Detection};
pub use special::{f_cdf, f_sf, ln_gamma, reg_inc_beta};
pub use tests::{levene_test, median, oneway_anova, select_critical, AnovaResult, LeveneCenter, LeveneResult};
