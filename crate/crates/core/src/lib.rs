//! Desk-scale simulator for three-stage multi-modal federated learning on
//! in-home sensing nodes, together with the edge-system model and the
//! biomarker statistics used for diagnosis.
//!
//! Module map:
//!
//! - [`nn`]: tensors, dense networks, backpropagation, SGD.
//! - [`losses`]: contrastive fusion loss, balanced cross-entropy, distillation.
//! - [`weak`]: coarse activity logs to time-ordered weak batches, permutation loss.
//! - [`datagen`]: synthetic non-i.i.d. multi-modal subject streams and data reduction.
//! - [`fl`]: model bundles, node/server rounds, modality-wise FedAvg, the three-stage run.
//! - [`sysim`]: bandwidth traces, band selection, sensor failures, round timing, pipelining.
//! - [`stats`]: biomarker features, Box-Cox, Levene, one-way ANOVA, diagnosis CV.

pub mod activities;
pub mod config;
pub mod datagen;
pub mod error;
pub mod fl;
pub mod io;
pub mod losses;
pub mod modality;
pub mod nn;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod sysim;
pub mod weak;

pub use error::{Error, Result};
pub use modality::Modality;
