//! Weak supervision from coarse activity logs.

mod batches;
mod labels;
mod permutation;

pub use batches::{associate, cyclic_fill, WeakBatch};
pub use labels::{
    parse_activity_log, validate_log, write_activity_log, ActivityLogEntry, LocalLabelMap, WeakLabelMap,
};
#[allow(unused_imports)]
pub(crate) use labels::csv_error;
pub use permutation::{permutation_ce_loss, PermutationLoss, EXHAUSTIVE_MAX};
