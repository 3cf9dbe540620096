use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activities::{ActivityTable, ClassSet};
use crate::error::{Error, Result};

/// A caregiver log entry: a coarse activity over `[start, end]` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityLogEntry {
    pub start: f64,
    pub end: f64,
    pub coarse_label: String,
}

impl ActivityLogEntry {
    pub fn new(start: f64, end: f64, coarse_label: impl Into<String>) -> Result<Self> {
        if !(start < end) {
            return Err(Error::Data(format!("log entry start {start} must precede end {end}")));
        }
        Ok(Self {
            start,
            end,
            coarse_label: coarse_label.into(),
        })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Checks that entries are sorted by start and do not overlap.
pub fn validate_log(entries: &[ActivityLogEntry]) -> Result<()> {
    for pair in entries.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(Error::Data(format!(
                "log entries [{}, {}] and [{}, {}] overlap or are out of order",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    Ok(())
}

/// Coarse log label to the set of fine table ids it licenses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabelMap {
    map: BTreeMap<String, Vec<u32>>,
}

impl WeakLabelMap {
    pub fn new(table: &ActivityTable, map: BTreeMap<String, Vec<u32>>) -> Result<Self> {
        let mut clean = BTreeMap::new();
        for (key, ids) in map {
            if ids.is_empty() {
                return Err(Error::Config(format!("coarse label `{key}` maps to no classes")));
            }
            if let Some(bad) = ids.iter().find(|&&id| !table.contains(id)) {
                return Err(Error::Config(format!("coarse label `{key}` maps to unknown class {bad}")));
            }
            let mut ids = ids;
            ids.sort_unstable();
            ids.dedup();
            clean.insert(key, ids);
        }
        Ok(Self { map: clean })
    }

    pub fn builtin() -> Self {
        let table = ActivityTable::builtin();
        let coarse = table.coarse.clone();
        Self::new(&table, coarse).expect("builtin map is valid")
    }

    /// Fine table ids licensed by an entry's coarse label, ascending.
    pub fn map_coarse_to_fine(&self, entry: &ActivityLogEntry) -> Result<&[u32]> {
        self.lookup(&entry.coarse_label)
    }

    pub fn lookup(&self, coarse: &str) -> Result<&[u32]> {
        self.map
            .get(coarse)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Mapping(coarse.to_string()))
    }

    pub fn coarse_labels(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Restricts the map to an experiment's class set. Coarse labels left with no
    /// active class are dropped.
    pub fn restrict(&self, classes: &ClassSet) -> LocalLabelMap {
        let categories = self
            .map
            .iter()
            .filter_map(|(key, ids)| {
                let mut local: Vec<usize> = ids.iter().filter_map(|&id| classes.index_of(id)).collect();
                local.sort_unstable();
                (!local.is_empty()).then(|| (key.clone(), local))
            })
            .collect();
        LocalLabelMap {
            categories,
            num_classes: classes.len(),
        }
    }
}

/// Weak label map expressed in 0-based class indices of a [`ClassSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalLabelMap {
    categories: Vec<(String, Vec<usize>)>,
    num_classes: usize,
}

impl LocalLabelMap {
    pub fn categories(&self) -> &[(String, Vec<usize>)] {
        &self.categories
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn lookup(&self, coarse: &str) -> Result<&[usize]> {
        self.categories
            .iter()
            .find(|(k, _)| k == coarse)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Mapping(coarse.to_string()))
    }

    /// First category (in key order) that contains `class`.
    pub fn category_of(&self, class: usize) -> Option<usize> {
        self.categories.iter().position(|(_, v)| v.contains(&class))
    }
}

/// Parses an activity log CSV with header `start_s,end_s,coarse_label`.
pub fn parse_activity_log(text: &str) -> Result<Vec<ActivityLogEntry>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
    let expected = ["start_s", "end_s", "coarse_label"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("expected header `start_s,end_s,coarse_label`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: i + 1,
                message: format!("`{}` is not a number", &record[i]),
            })
        };
        let (start, end) = (field(0)?, field(1)?);
        let entry = ActivityLogEntry::new(start, end, record[2].trim()).map_err(|e| Error::Parse {
            line,
            column: 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    validate_log(&entries)?;
    Ok(entries)
}

pub fn write_activity_log(entries: &[ActivityLogEntry]) -> String {
    let mut out = String::from("start_s,end_s,coarse_label\n");
    for e in entries {
        out.push_str(&format!("{},{},{}\n", e.start, e.end, e.coarse_label));
    }
    out
}

pub(crate) fn csv_error(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
    Error::Parse {
        line,
        column: 1,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_examples() {
        let map = WeakLabelMap::builtin();
        let meal = ActivityLogEntry::new(0.0, 10.0, "having_a_meal").unwrap();
        assert_eq!(map.map_coarse_to_fine(&meal).unwrap(), &[9, 19]);
        assert_eq!(map.lookup("household").unwrap(), &[18, 20]);
        assert!(matches!(map.lookup("napping"), Err(Error::Mapping(_))));
    }

    #[test]
    fn singleton_mapping() {
        let table = ActivityTable::builtin();
        let map = WeakLabelMap::new(&table, [("outside".to_string(), vec![1])].into_iter().collect()).unwrap();
        assert_eq!(map.lookup("outside").unwrap(), &[1]);
        assert!(WeakLabelMap::new(&table, [("x".to_string(), vec![])].into_iter().collect()).is_err());
        assert!(WeakLabelMap::new(&table, [("x".to_string(), vec![99])].into_iter().collect()).is_err());
    }

    #[test]
    fn restriction_to_desk_classes() {
        let table = ActivityTable::builtin();
        let classes = ClassSet::new(&table, table.desk_classes.clone()).unwrap();
        let local = WeakLabelMap::builtin().restrict(&classes);
        // walking, sitting, standing, eating, cleaning, grooming, wiping, exercising
        assert_eq!(local.lookup("having_a_meal").unwrap(), &[1, 3]);
        assert_eq!(local.lookup("household").unwrap(), &[0, 2]);
        assert_eq!(local.lookup("grooming_hygiene").unwrap(), &[4, 5, 6]);
        assert_eq!(local.lookup("exercise").unwrap(), &[7]);
        assert!(local.lookup("rest").is_err());
        for c in 0..8 {
            assert!(local.category_of(c).is_some());
        }
    }

    #[test]
    fn log_csv_parsing() {
        let text = "start_s,end_s,coarse_label\n0,100,having_a_meal\n200,260.5,household\n";
        let log = parse_activity_log(text).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].end, 260.5);
        assert_eq!(parse_activity_log(&write_activity_log(&log)).unwrap(), log);

        let err = parse_activity_log("start_s,end_s,coarse_label\n0,abc,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 2, .. }), "{err:?}");
        assert!(parse_activity_log("a,b,c\n1,2,x\n").is_err());
        assert!(parse_activity_log("start_s,end_s,coarse_label\n5,1,x\n").is_err());
        assert!(parse_activity_log("start_s,end_s,coarse_label\n0,10,x\n5,20,y\n").is_err());
    }
}
