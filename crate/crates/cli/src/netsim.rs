use std::fmt::Write as _;

use anyhow::Result;
use rand::Rng;

use fedmark::config::ExperimentConfig;
use fedmark::modality::Modality;
use fedmark::rng::{rng_for, stream};
use fedmark::sysim::{down_at, failure_schedule, simulate_round, trace_csv, BandwidthTrace, RoundNode, SensorFailure};

use crate::Outputs;

/// Minutes between round starts.
const ROUND_EVERY_S: f64 = 900.0;
/// Raw sensor samples per hour (one every 2 s).
const SAMPLES_PER_HOUR: f64 = 1800.0;

/// Local training time of a node before upload: a nominal reduced dataset
/// times the configured per-sample cost, jittered ±20 % per node.
fn compute_s(cfg: &ExperimentConfig, node: u32) -> f64 {
    let sel = &cfg.data.selection;
    let samples = (sel.window_end_h - sel.window_start_h) * SAMPLES_PER_HOUR * sel.rate * cfg.data.duration_days;
    let jitter = rng_for(cfg.seed, &[stream::TRACE, 1, node as u64]).random_range(0.8..1.2);
    cfg.unsupervised.local_epochs.max(1) as f64 * samples * cfg.system.compute_s_per_sample * jitter
}

fn is_night(cfg: &ExperimentConfig, t_s: f64) -> bool {
    let h = (t_s / 3600.0).rem_euclid(24.0);
    !(cfg.trace.day_start_h..cfg.trace.day_end_h).contains(&h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRow {
    pub start_s: f64,
    pub round_time_s: f64,
    pub download_s: f64,
    pub participants: usize,
    pub dropped: usize,
    pub night: bool,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Trace rows, failure schedule and one round every 15 minutes over `hours`.
pub fn simulate(cfg: &ExperimentConfig, hours: f64, payload: u64) -> Result<(Vec<(f64, f64)>, Vec<(u32, SensorFailure)>, Vec<RoundRow>)> {
    let horizon = hours * 3600.0;
    // one extra day so a round starting near the end can finish on the trace
    let trace = BandwidthTrace::new(cfg.trace.clone(), horizon + 86_400.0, &mut rng_for(cfg.seed, &[stream::TRACE]))?;
    let nodes: Vec<u32> = (0..cfg.roster.nodes as u32).collect();
    let mut failures = Vec::new();
    if cfg.failures.enabled {
        for &id in &nodes {
            let sched = failure_schedule(&cfg.failures.process(), &Modality::ALL, hours / 24.0, &mut rng_for(cfg.seed, &[stream::FAILURE, id as u64]))?;
            failures.extend(sched.into_iter().map(|f| (id, f)));
        }
    }
    let mut rows = Vec::new();
    let mut start = 0.0;
    while start < horizon {
        let round_nodes: Vec<RoundNode> = nodes
            .iter()
            .filter(|&&id| {
                let own: Vec<SensorFailure> = failures.iter().filter(|(n, _)| *n == id).map(|(_, f)| f.clone()).collect();
                down_at(&own, start).len() < Modality::ALL.len()
            })
            .map(|&id| RoundNode {
                node_id: id,
                compute_s: compute_s(cfg, id),
                upload_bytes: payload,
            })
            .collect();
        let outcome = simulate_round(&round_nodes, start, &trace, &cfg.network, payload)?;
        rows.push(RoundRow {
            start_s: start,
            round_time_s: outcome.round_time_s,
            download_s: outcome.download_s,
            participants: round_nodes.len(),
            dropped: outcome.dropped().len(),
            night: is_night(cfg, start),
        });
        start += ROUND_EVERY_S;
    }
    Ok((trace.rows(hours), failures, rows))
}

pub fn night_day_ratio(rows: &[RoundRow]) -> Option<f64> {
    let night = mean(rows.iter().filter(|r| r.night).map(|r| r.round_time_s))?;
    let day = mean(rows.iter().filter(|r| !r.night).map(|r| r.round_time_s))?;
    Some(night / day)
}

pub fn run(cfg: &ExperimentConfig, hours: f64, payload_bytes: Option<u64>) -> Result<Outputs> {
    let payload = payload_bytes.unwrap_or(cfg.system.netsim_payload_bytes);
    let (trace, failures, rounds) = simulate(cfg, hours, payload)?;

    let mut out = Outputs::default();
    out.add("trace.csv", trace_csv(&trace));
    let mut f = String::from("node_id,sensor,down_s,up_s\n");
    for (id, x) in &failures {
        writeln!(f, "{id},{},{},{}", x.sensor, x.down_s, x.up_s)?;
    }
    out.add("failures.csv", f);
    let mut r = String::from("start_h,round_time_s,download_s,participants,dropped,night\n");
    for x in &rounds {
        writeln!(r, "{},{},{},{},{},{}", x.start_s / 3600.0, x.round_time_s, x.download_s, x.participants, x.dropped, x.night)?;
    }
    out.add("netsim_round_times.csv", r);

    let day = mean(rounds.iter().filter(|r| !r.night).map(|r| r.round_time_s));
    let night = mean(rounds.iter().filter(|r| r.night).map(|r| r.round_time_s));
    let ratio = night_day_ratio(&rounds);
    let summary = serde_json::json!({
        "hours": hours,
        "payload_bytes": payload,
        "rounds": rounds.len(),
        "sensor_failures": failures.len(),
        "mean_round_time_day_s": day,
        "mean_round_time_night_s": night,
        "night_day_ratio": ratio,
    });
    out.add("netsim_summary.json", serde_json::to_string_pretty(&summary)? + "\n");

    println!("{} trace rows, {} rounds, {} sensor failures, payload {payload} B", trace.len(), rounds.len(), failures.len());
    if let (Some(d), Some(n)) = (day, night) {
        println!("mean round time: day {d:.1} s, night {n:.1} s");
    }
    if let Some(r) = ratio {
        println!("night/day ratio {r:.3}");
    }
    Ok(out)
}
