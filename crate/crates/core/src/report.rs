//! Run metrics as JSON lines.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Simulated time at which the record was produced.
    pub t_s: f64,
}

impl MetricRecord {
    pub fn new(stage: &str, round: usize, t_s: f64) -> Self {
        Self {
            stage: stage.to_string(),
            round,
            node_id: None,
            loss: None,
            accuracy: None,
            per_class: None,
            head_acc: None,
            tail_acc: None,
            round_time_s: None,
            note: None,
            t_s,
        }
    }
}

/// Mean accuracies of one way of obtaining a node model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachScore {
    pub accuracy: f64,
    pub head_acc: f64,
    pub tail_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub nodes: usize,
    pub pretrained_only: ApproachScore,
    pub supervised_only: Option<ApproachScore>,
    /// Each node's model after its last weak round.
    pub three_stage: Option<ApproachScore>,
    /// The final global model on every node's test set.
    pub three_stage_global: Option<ApproachScore>,
    pub unsupervised_rounds: usize,
    pub weak_rounds: usize,
    pub mean_round_time_s: Option<f64>,
    pub total_time_s: f64,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<MetricRecord>,
    pub summary: Option<Summary>,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    stage: &'static str,
    #[serde(flatten)]
    summary: &'a Summary,
}

impl MetricsReport {
    pub fn push(&mut self, record: MetricRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.t_s <= record.t_s));
        self.records.push(record);
    }

    pub fn fl_round_records(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.stage == "unsupervised_fl" || r.stage == "weak_fl")
            .count()
    }

    /// One JSON object per record, then the summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        if let Some(s) = &self.summary {
            let line = SummaryLine {
                stage: "summary",
                summary: s,
            };
            out.push_str(&serde_json::to_string(&line).expect("summary serializes"));
            out.push('\n');
        }
        out
    }
}
