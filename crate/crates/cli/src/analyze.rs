use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use fedmark::activities::ActivityTable;
use fedmark::config::ExperimentConfig;
use fedmark::datagen::Group;
use fedmark::stats::{analyze, extract_features, feature_names, parse_detections, planted_cohort, write_detections, AnalysisOutput, CohortConfig};

use crate::Outputs;

/// `subject_id,group` rows.
pub fn parse_groups(text: &str) -> Result<Vec<(u32, Group)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().context("line 1: unreadable header")?.clone();
    if headers.len() != 2 || &headers[0] != "subject_id" || &headers[1] != "group" {
        bail!("line 1, column 1: expected header `subject_id,group`");
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| anyhow!("{e}"))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            bail!("line {line}: expected 2 fields, found {}", record.len());
        }
        let id = record[0]
            .parse::<u32>()
            .map_err(|_| anyhow!("line {line}, column 1: `{}` is not a subject id", &record[0]))?;
        let group = record[1]
            .parse::<Group>()
            .map_err(|e| anyhow!("line {line}, column 2: {e}"))?;
        if out.iter().any(|(i, _)| *i == id) {
            bail!("line {line}, column 1: subject {id} listed twice");
        }
        out.push((id, group));
    }
    Ok(out)
}

fn class_names(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let table = ActivityTable::builtin();
    cfg.classes
        .iter()
        .map(|&id| table.class(id).map(|c| c.key.clone()).ok_or_else(|| anyhow!("class id {id} is not in the table")))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_outputs(result: &AnalysisOutput, out: &mut Outputs) -> Result<()> {
    let mut anova = String::from("feature,lambda,F,p,critical,note\n");
    let mut levene = String::from("feature,W,p\n");
    for t in &result.tests {
        writeln!(anova, "{},{},{},{},{},{}", t.feature, opt(t.lambda), opt(t.f), opt(t.p), t.critical, t.note)?;
        writeln!(levene, "{},{},{}", t.feature, opt(t.levene_w), opt(t.levene_p))?;
    }
    out.add("anova.csv", anova);
    out.add("levene.csv", levene);
    for r in &result.diagnosis {
        out.add(format!("confusion_{}.json", r.task.name()), serde_json::to_string_pretty(r)? + "\n");
    }
    let summary = serde_json::json!({
        "mean_levene_p": result.mean_levene_p,
        "levene_warning": result.levene_warning,
        "critical": result.critical,
        "diagnosis": result.diagnosis.iter().map(|r| (r.task.name(), r.accuracy)).collect::<std::collections::BTreeMap<_, _>>(),
        "skipped_tasks": result.skipped_tasks,
    });
    out.add("analysis_summary.json", serde_json::to_string_pretty(&summary)? + "\n");
    Ok(())
}

/// Features, per-feature tests and diagnosis from one detection CSV per
/// subject.
pub fn run(cfg: &ExperimentConfig, detections: &Path, groups: &Path, period: f64) -> Result<Outputs> {
    let text = std::fs::read_to_string(groups).with_context(|| format!("cannot read {}", groups.display()))?;
    let subjects = parse_groups(&text).with_context(|| groups.display().to_string())?;
    let names = class_names(cfg)?;
    let features = feature_names(&names);
    let mut rows = Vec::with_capacity(subjects.len());
    for &(id, group) in &subjects {
        let path = detections.join(format!("{id}.csv"));
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let timeline = parse_detections(&text).with_context(|| path.display().to_string())?;
        rows.push(extract_features(id, group, &timeline, names.len(), period).with_context(|| path.display().to_string())?);
    }
    let result = analyze(&rows, &features, &cfg.analysis, cfg.seed)?;

    let mut out = Outputs::default();
    let mut csv = format!("subject_id,group,recording_period_s,{}\n", features.join(","));
    for r in &rows {
        let values: Vec<String> = r.vector().iter().map(|v| v.to_string()).collect();
        writeln!(csv, "{},{},{},{}", r.subject_id, r.group, r.recording_period_s, values.join(","))?;
    }
    out.add("features.csv", csv);
    write_outputs(&result, &mut out)?;

    println!("critical features: {}", if result.critical.is_empty() { "none".into() } else { result.critical.join(", ") });
    if let Some(p) = result.mean_levene_p {
        println!("mean Levene p {p:.3}");
    }
    if result.levene_warning {
        eprintln!("warning: mean Levene p <= 0.05, equal variances are doubtful");
    }
    for r in &result.diagnosis {
        println!("{} accuracy {:.3}", r.task.name(), r.accuracy);
    }
    Ok(out)
}

/// A planted-effect cohort in the layout `analyze` reads.
pub fn cohort(cfg: &ExperimentConfig, planted: Option<usize>, subjects_per_group: usize) -> Result<Outputs> {
    let cc = CohortConfig {
        subjects_per_group,
        num_classes: cfg.classes.len(),
        planted_class: planted,
        ..CohortConfig::default()
    };
    let subjects = planted_cohort(&cc, cfg.seed)?;
    let mut out = Outputs::default();
    let mut groups = String::from("subject_id,group\n");
    for s in &subjects {
        writeln!(groups, "{},{}", s.subject_id, s.group)?;
        out.add(Path::new("detections").join(format!("{}.csv", s.subject_id)), write_detections(&s.timeline));
    }
    out.add("groups.csv", groups);
    Ok(out)
}
