//! Timing of one synchronous FL round as a small discrete-event simulation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::band::{default_bands, select_band, Band, Direction};
use super::trace::BandwidthTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkParams {
    pub bands: Vec<Band>,
    pub aggregation_s: f64,
    /// Uploads not finished this long after the round starts are dropped.
    pub deadline_s: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            bands: default_bands(),
            aggregation_s: 1.0,
            deadline_s: 6.0 * 3600.0,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Config("network needs at least one band".into()));
        }
        for b in &self.bands {
            b.validate()?;
        }
        if !(self.aggregation_s >= 0.0) || !(self.deadline_s > 0.0) {
            return Err(Error::Config("aggregation must be >= 0 and deadline > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundNode {
    pub node_id: u32,
    pub compute_s: f64,
    pub upload_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ComputeDone,
    UploadDone,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_s: f64,
    pub kind: EventKind,
    pub node_id: u32,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t_s
            .total_cmp(&self.t_s)
            .then_with(|| other.kind.cmp(&self.kind))
            .then_with(|| other.node_id.cmp(&self.node_id))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTiming {
    pub node_id: u32,
    pub compute_s: f64,
    pub upload_s: Option<f64>,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub start_s: f64,
    pub round_time_s: f64,
    pub download_s: f64,
    pub nodes: Vec<NodeTiming>,
    /// Events in processing order.
    pub events: Vec<Event>,
}

impl RoundOutcome {
    pub fn dropped(&self) -> Vec<u32> {
        self.nodes.iter().filter(|n| n.dropped).map(|n| n.node_id).collect()
    }
}

/// Nodes compute, then upload over the best uplink band modulated by the trace;
/// the server aggregates once the last surviving upload lands and broadcasts
/// `download_bytes` over the best downlink band.
pub fn simulate_round(
    nodes: &[RoundNode],
    start_s: f64,
    trace: &BandwidthTrace,
    network: &NetworkParams,
    download_bytes: u64,
) -> Result<RoundOutcome> {
    network.validate()?;
    let up_rate = select_band(Direction::Upload, &network.bands)?.uplink_mbps;
    let down_rate = select_band(Direction::Download, &network.bands)?.downlink_mbps;
    let deadline = start_s + network.deadline_s;

    let mut queue = BinaryHeap::new();
    for n in nodes {
        if !(n.compute_s >= 0.0 && n.compute_s.is_finite()) {
            return Err(Error::Parameter(format!("node {}: compute time must be >= 0", n.node_id)));
        }
        queue.push(Event {
            t_s: start_s + n.compute_s,
            kind: EventKind::ComputeDone,
            node_id: n.node_id,
        });
    }
    let mut timings: Vec<NodeTiming> = nodes
        .iter()
        .map(|n| NodeTiming {
            node_id: n.node_id,
            compute_s: n.compute_s,
            upload_s: None,
            dropped: false,
        })
        .collect();
    let slot = |id: u32| nodes.iter().position(|n| n.node_id == id).expect("known node");

    let mut events = Vec::new();
    let mut last_arrival = start_s;
    while let Some(ev) = queue.pop() {
        events.push(ev);
        let i = slot(ev.node_id);
        match ev.kind {
            EventKind::ComputeDone => {
                let bits = nodes[i].upload_bytes as f64 * 8.0;
                match trace.finish_time(ev.t_s, bits, up_rate, deadline) {
                    Some(t) => queue.push(Event {
                        t_s: t,
                        kind: EventKind::UploadDone,
                        node_id: ev.node_id,
                    }),
                    None => queue.push(Event {
                        t_s: deadline.max(ev.t_s),
                        kind: EventKind::Dropped,
                        node_id: ev.node_id,
                    }),
                }
            }
            EventKind::UploadDone => {
                timings[i].upload_s = Some(ev.t_s - start_s - nodes[i].compute_s);
                last_arrival = last_arrival.max(ev.t_s);
            }
            EventKind::Dropped => timings[i].dropped = true,
        }
    }

    let aggregated = last_arrival + network.aggregation_s;
    let end = trace
        .finish_time(aggregated, download_bytes as f64 * 8.0, down_rate, f64::INFINITY)
        .ok_or_else(|| Error::Connectivity("broadcast never completes".into()))?;
    Ok(RoundOutcome {
        start_s,
        round_time_s: end - start_s,
        download_s: end - aggregated,
        nodes: timings,
        events,
    })
}
