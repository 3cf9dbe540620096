//! Edge-system dynamics: band selection, bandwidth traces, sensor failures,
//! FL round timing and inference pipelining.

mod band;
mod failure;
mod pipeline;
mod round;
mod trace;

pub use band::{default_bands, select_band, transmission_time, Band, Direction};
pub use failure::{down_at, failure_schedule, failures_csv, SensorFailure, SensorFailureProcess};
pub use pipeline::{pipeline_throughput, PipelineMode, PipelineSpec};
pub use round::{simulate_round, Event, EventKind, NetworkParams, NodeTiming, RoundNode, RoundOutcome};
pub use trace::{trace_csv, BandwidthTrace, TraceParams};
