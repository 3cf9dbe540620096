use super::labels::{ActivityLogEntry, LocalLabelMap};
use crate::datagen::MultiModalSample;
use crate::error::{Error, Result};

/// Consecutive samples from one log entry with the labels the entry licenses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakBatch {
    /// Indices into the stream, strictly increasing in time.
    pub samples: Vec<usize>,
    /// Licensed class indices, one per sample. Not an assignment.
    pub label_multiset: Vec<usize>,
    /// Index of the source log entry.
    pub entry: usize,
}

impl WeakBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Cycles `set` in order to length `n`.
pub fn cyclic_fill(set: &[usize], n: usize) -> Vec<usize> {
    set.iter().copied().cycle().take(n).collect()
}

/// Splits the samples covered by each log entry into time-ordered batches of at
/// most `batch_size`. Samples outside every entry are not used. Entries whose
/// coarse label has no active class are skipped.
pub fn associate(
    log: &[ActivityLogEntry],
    stream: &[MultiModalSample],
    map: &LocalLabelMap,
    batch_size: usize,
) -> Result<Vec<WeakBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if stream.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(Error::Data("stream timestamps must be sorted".into()));
    }
    let mut batches = Vec::new();
    for (entry_idx, entry) in log.iter().enumerate() {
        let Ok(set) = map.lookup(&entry.coarse_label) else {
            continue;
        };
        let lo = stream.partition_point(|s| s.timestamp < entry.start);
        let hi = stream.partition_point(|s| s.timestamp <= entry.end);
        let covered: Vec<usize> = (lo..hi).collect();
        for chunk in covered.chunks(batch_size) {
            batches.push(WeakBatch {
                samples: chunk.to_vec(),
                label_multiset: cyclic_fill(set, chunk.len()),
                entry: entry_idx,
            });
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activities::{ActivityTable, ClassSet};
    use crate::weak::WeakLabelMap;
    use std::collections::BTreeMap;

    fn sample(t: f64) -> MultiModalSample {
        MultiModalSample {
            timestamp: t,
            modality_data: BTreeMap::new(),
            human_present: true,
            fine_label: None,
            coarse_label: None,
            activity: Some(0),
        }
    }

    fn local_map() -> LocalLabelMap {
        let table = ActivityTable::builtin();
        WeakLabelMap::builtin().restrict(&ClassSet::new(&table, table.desk_classes.clone()).unwrap())
    }

    #[test]
    fn empty_log_gives_no_batches() {
        let stream: Vec<_> = (0..10).map(|i| sample(i as f64 * 2.0)).collect();
        assert!(associate(&[], &stream, &local_map(), 4).unwrap().is_empty());
    }

    #[test]
    fn cyclic_fill_of_one_entry() {
        let stream: Vec<_> = (0..4).map(|i| sample(i as f64 * 2.0)).collect();
        let log = vec![ActivityLogEntry::new(0.0, 7.0, "household").unwrap()];
        let batches = associate(&log, &stream, &local_map(), 4).unwrap();
        assert_eq!(batches.len(), 1);
        let mut labels = batches[0].label_multiset.clone();
        labels.sort_unstable();
        // household -> {walking (0), standing (2)}
        assert_eq!(labels, vec![0, 0, 2, 2]);
    }

    #[test]
    fn gap_samples_are_excluded() {
        let stream: Vec<_> = (0..30).map(|i| sample(i as f64 * 2.0)).collect();
        let log = vec![
            ActivityLogEntry::new(0.0, 9.0, "household").unwrap(),
            ActivityLogEntry::new(30.0, 41.0, "having_a_meal").unwrap(),
        ];
        let batches = associate(&log, &stream, &local_map(), 3).unwrap();
        let used: Vec<usize> = batches.iter().flat_map(|b| b.samples.clone()).collect();
        assert_eq!(used, vec![0, 1, 2, 3, 4, 15, 16, 17, 18, 19, 20]);
        for b in &batches {
            assert!(b.len() <= 3);
            assert_eq!(b.len(), b.label_multiset.len());
            for &i in &b.samples {
                assert!(log[b.entry].contains(stream[i].timestamp));
            }
        }
    }
}
