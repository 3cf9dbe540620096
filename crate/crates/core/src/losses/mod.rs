//! Training objectives: contrastive fusion, balanced cross-entropy and
//! knowledge distillation.

mod classification;
mod contrastive;

pub use classification::{
    balanced_ce, combined_weak_stage_loss, cross_entropy, kd_loss, per_sample_ce, softmax, weighted_ce, ClassCounts,
    KdConfig,
};
pub use contrastive::{
    contrastive_fusion_loss, default_recipes, fuse_features, random_projection, ContrastiveConfig, FusedFeatureSet,
    Fusion, FusionRecipe,
};
