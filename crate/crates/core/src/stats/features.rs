//! Per-subject activity features: time share and episode rate of every class.

use serde::{Deserialize, Serialize};

use crate::datagen::Group;
use crate::error::{Error, Result};
use crate::weak::csv_error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t_s: f64,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerFeatureRow {
    pub subject_id: u32,
    pub group: Group,
    /// Detected seconds of each class over the recording period.
    pub duration_frac: Vec<f64>,
    /// Episodes of each class per recorded second.
    pub freq_rate: Vec<f64>,
    pub recording_period_s: f64,
}

impl BiomarkerFeatureRow {
    /// Durations then frequencies.
    pub fn vector(&self) -> Vec<f64> {
        self.duration_frac.iter().chain(&self.freq_rate).copied().collect()
    }
}

pub fn feature_names(class_names: &[String]) -> Vec<String> {
    let dur = class_names.iter().map(|c| format!("duration_{c}"));
    let freq = class_names.iter().map(|c| format!("frequency_{c}"));
    dur.chain(freq).collect()
}

/// Detections are `period_s` apart when consecutive; an episode is a maximal
/// run of consecutive detections of one class. The recording period runs from
/// the first detection to the end of the last.
pub fn extract_features(
    subject_id: u32,
    group: Group,
    timeline: &[Detection],
    num_classes: usize,
    period_s: f64,
) -> Result<BiomarkerFeatureRow> {
    let (first, last) = match (timeline.first(), timeline.last()) {
        (Some(f), Some(l)) => (f.t_s, l.t_s),
        _ => return Err(Error::Data(format!("subject {subject_id}: empty timeline"))),
    };
    if !(period_s > 0.0) {
        return Err(Error::Parameter("detection period must be positive".into()));
    }
    let mut seconds = vec![0.0; num_classes];
    let mut episodes = vec![0usize; num_classes];
    let mut prev: Option<&Detection> = None;
    for d in timeline {
        if d.class >= num_classes {
            return Err(Error::Data(format!("subject {subject_id}: class {} out of range", d.class)));
        }
        if let Some(p) = prev {
            if !(d.t_s > p.t_s) {
                return Err(Error::Data(format!("subject {subject_id}: timestamps must increase")));
            }
        }
        seconds[d.class] += period_s;
        let continues = prev.is_some_and(|p| p.class == d.class && (d.t_s - p.t_s - period_s).abs() < 1e-9);
        if !continues {
            episodes[d.class] += 1;
        }
        prev = Some(d);
    }
    let recording = last - first + period_s;
    Ok(BiomarkerFeatureRow {
        subject_id,
        group,
        duration_frac: seconds.iter().map(|s| s / recording).collect(),
        freq_rate: episodes.iter().map(|&e| e as f64 / recording).collect(),
        recording_period_s: recording,
    })
}

/// Parses `t_s,class_idx` CSV.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
    if headers.len() != 2 || headers[0].trim() != "t_s" || headers[1].trim() != "class_idx" {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "expected header `t_s,class_idx`".into(),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let t_s = record[0].trim().parse::<f64>().map_err(|_| Error::Parse {
            line,
            column: 1,
            message: format!("`{}` is not a number", &record[0]),
        })?;
        let class = record[1].trim().parse::<usize>().map_err(|_| Error::Parse {
            line,
            column: 2,
            message: format!("`{}` is not a class index", &record[1]),
        })?;
        out.push(Detection { t_s, class });
    }
    Ok(out)
}

pub fn write_detections(timeline: &[Detection]) -> String {
    let mut out = String::from("t_s,class_idx\n");
    for d in timeline {
        out.push_str(&format!("{},{}\n", d.t_s, d.class));
    }
    out
}
