use std::fmt::Write as _;

use anyhow::Result;

use fedmark::config::ExperimentConfig;
use fedmark::fl::{run_three_stage, Evaluation, NodeScores, RoundLog, RunOptions};
use fedmark::report::{ApproachScore, Summary};

use crate::Outputs;

fn ids(v: &[u32]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn round_times_csv(log: &[RoundLog]) -> String {
    let mut out = String::from("stage,round,start_s,round_time_s,selected,aggregated,dropped,skipped\n");
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.stage.name(),
            r.round,
            r.start_s,
            r.round_time_s,
            ids(&r.selected),
            ids(&r.aggregated),
            ids(&r.dropped),
            ids(&r.skipped)
        )
        .unwrap();
    }
    out
}

pub fn node_scores_csv(nodes: &[NodeScores]) -> String {
    let mut out = String::from("node_id,group,modalities,train_samples,labeled,weak_samples");
    for a in ["pretrained", "supervised", "three_stage", "three_stage_global"] {
        write!(out, ",{a}_acc,{a}_head,{a}_tail").unwrap();
    }
    out.push('\n');
    let cells = |e: Option<&Evaluation>| match e {
        Some(e) => format!("{},{},{}", e.accuracy, opt(e.head_acc), opt(e.tail_acc)),
        None => ",,".to_string(),
    };
    for n in nodes {
        let mods: Vec<String> = n.modalities.iter().map(|m| m.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            n.node_id,
            n.group,
            mods.join("+"),
            n.train_samples,
            n.labeled,
            n.weak_samples,
            cells(Some(&n.pretrained)),
            cells(n.supervised.as_ref()),
            cells(n.three_stage.as_ref()),
            cells(n.three_stage_global.as_ref())
        )
        .unwrap();
    }
    out
}

pub fn summary_table(s: &Summary) -> String {
    let mut out = format!("seed {}  nodes {}\n{:<20}{:>10}{:>10}{:>10}\n", s.seed, s.nodes, "approach", "accuracy", "head", "tail");
    let mut row = |name: &str, a: Option<&ApproachScore>| {
        if let Some(a) = a {
            writeln!(out, "{name:<20}{:>10.4}{:>10.4}{:>10.4}", a.accuracy, a.head_acc, a.tail_acc).unwrap();
        }
    };
    row("pretrained-only", Some(&s.pretrained_only));
    row("supervised-only", s.supervised_only.as_ref());
    row("three-stage", s.three_stage.as_ref());
    row("three-stage global", s.three_stage_global.as_ref());
    if let Some(t) = s.mean_round_time_s {
        writeln!(out, "mean FL round time {t:.1} s over {} + {} rounds", s.unsupervised_rounds, s.weak_rounds).unwrap();
    }
    out
}

/// Runs the protocol; outputs metrics.jsonl, round_times.csv, node_scores.csv
/// and the resolved config.
pub fn run(cfg: &ExperimentConfig, workers: usize, pretrain_only: bool) -> Result<Outputs> {
    let result = run_three_stage(cfg, &RunOptions { workers, pretrain_only })?;
    let mut out = Outputs::default();
    out.add("metrics.jsonl", result.report.to_jsonl());
    out.add("round_times.csv", round_times_csv(&result.server.log));
    out.add("node_scores.csv", node_scores_csv(&result.nodes));
    out.add("config.toml", cfg.to_toml());
    if let Some(s) = &result.report.summary {
        print!("{}", summary_table(s));
    }
    Ok(out)
}
