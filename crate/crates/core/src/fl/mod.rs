//! Model bundles, node and server rounds, modality-wise FedAvg and the
//! three-stage run.

mod aggregate;
mod bundle;
mod eval;
mod run;
mod train;

pub use aggregate::{modality_wise_fedavg, weighted_average, Contribution, EncoderUpdate};
pub use bundle::{batch_inputs, init_encoder, BundleGrads, BundleTrace, EncoderTrace, Inputs, ModelBundle, ModelSpec};
pub use eval::{evaluate, evaluate_predictions, predict, Evaluation, HEAD_TAIL};
pub use run::{
    build_roster, build_world, pretrain, run_three_stage, server_pool, NodeScores, NodeState, RoundLog, RunOptions,
    RunOutput, ServerState, StageId,
};
pub use train::{
    contrastive_eval, local_unsup_round, local_weak_round, train_supervised, train_units, unit_class_counts,
    RoundOutput, SupervisedParams, TrainUnit, UnsupParams, WeakParams, WeakUpdate,
};
