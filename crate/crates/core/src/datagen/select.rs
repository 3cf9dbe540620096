//! Deployment data reduction: a daytime collection window, even subsampling,
//! and removal of frames with nobody in view.

use serde::{Deserialize, Serialize};

use super::stream::MultiModalSample;
use crate::error::{Error, Result};

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionPolicy {
    /// Collection window start, hours after midnight (inclusive).
    pub window_start_h: f64,
    /// Collection window end, hours after midnight (exclusive).
    pub window_end_h: f64,
    /// Fraction of in-window samples kept by even striding.
    pub rate: f64,
    pub drop_absent: bool,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            window_start_h: 7.0,
            window_end_h: 19.0,
            rate: 0.01,
            drop_absent: true,
        }
    }
}

impl SelectionPolicy {
    /// Keeps everything.
    pub fn keep_all() -> Self {
        Self {
            window_start_h: 0.0,
            window_end_h: 24.0,
            rate: 1.0,
            drop_absent: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=24.0).contains(&self.window_start_h)
            || !(0.0..=24.0).contains(&self.window_end_h)
            || self.window_start_h >= self.window_end_h
        {
            return Err(Error::Config("selection window must satisfy 0 <= start < end <= 24".into()));
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::Config("selection rate must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Keep every `stride`-th in-window sample.
    pub fn stride(&self) -> usize {
        ((1.0 / self.rate).floor() as usize).max(1)
    }

    pub fn in_window(&self, timestamp: f64) -> bool {
        let hour = timestamp.rem_euclid(DAY_S) / 3600.0;
        hour >= self.window_start_h && hour < self.window_end_h
    }
}

/// Streaming form of [`select_data`].
#[derive(Debug, Clone)]
pub(crate) struct Selector {
    policy: SelectionPolicy,
    stride: usize,
    windowed: usize,
}

impl Selector {
    pub(crate) fn new(policy: &SelectionPolicy) -> Self {
        Self {
            policy: policy.clone(),
            stride: policy.stride(),
            windowed: 0,
        }
    }

    pub(crate) fn keep(&mut self, timestamp: f64, human_present: bool) -> bool {
        if !self.policy.in_window(timestamp) {
            return false;
        }
        let pos = self.windowed;
        self.windowed += 1;
        if pos % self.stride != 0 {
            return false;
        }
        human_present || !self.policy.drop_absent
    }
}

/// Window filter, then every `floor(1/rate)`-th remaining sample, then the
/// presence filter. Order is preserved.
pub fn select_data(stream: &[MultiModalSample], policy: &SelectionPolicy) -> Vec<MultiModalSample> {
    let mut selector = Selector::new(policy);
    stream
        .iter()
        .filter(|s| selector.keep(s.timestamp, s.human_present))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(t: f64, present: bool) -> MultiModalSample {
        MultiModalSample {
            timestamp: t,
            modality_data: BTreeMap::new(),
            human_present: present,
            fine_label: None,
            coarse_label: None,
            activity: present.then_some(0),
        }
    }

    #[test]
    fn night_samples_are_dropped() {
        let stream: Vec<_> = (0..100).map(|i| sample(3.0 * 3600.0 + i as f64 * 2.0, true)).collect();
        assert!(select_data(&stream, &SelectionPolicy::default()).is_empty());
    }

    #[test]
    fn one_percent_of_ten_thousand() {
        let stream: Vec<_> = (0..10_000).map(|i| sample(7.0 * 3600.0 + i as f64 * 2.0, true)).collect();
        let kept = select_data(&stream, &SelectionPolicy::default());
        assert_eq!(kept.len(), 100);
        for (k, s) in kept.iter().enumerate() {
            assert_eq!(s.timestamp, 7.0 * 3600.0 + (k * 100) as f64 * 2.0);
        }
    }

    #[test]
    fn window_and_presence_filters_are_idempotent() {
        let stream: Vec<_> = (0..5000).map(|i| sample(i as f64 * 37.0, i % 3 != 0)).collect();
        let policy = SelectionPolicy {
            rate: 1.0,
            ..SelectionPolicy::default()
        };
        let once = select_data(&stream, &policy);
        assert_eq!(select_data(&once, &policy), once);
    }

    #[test]
    fn validation() {
        assert!(SelectionPolicy { rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(SelectionPolicy { window_start_h: 20.0, ..Default::default() }.validate().is_err());
        assert!(SelectionPolicy::default().validate().is_ok());
    }
}
