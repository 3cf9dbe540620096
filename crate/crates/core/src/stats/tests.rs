//! One-way ANOVA, Levene's test (median centred) and critical-feature selection.

use serde::{Deserialize, Serialize};

use super::special::f_sf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeveneCenter {
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeveneResult {
    pub w: f64,
    pub p_value: f64,
    pub center: LeveneCenter,
}

fn check_groups(groups: &[Vec<f64>]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::Data("need at least two groups".into()));
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::Data(format!("group {i} has fewer than two samples")));
    }
    if groups.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Data("observations must be finite".into()));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn oneway_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    check_groups(groups)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ssb = if means.iter().all(|&m| m.to_bits() == means[0].to_bits()) {
        0.0
    } else {
        groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
            .sum()
    };
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m) * (x - m)).sum::<f64>())
        .sum();
    let (df_b, df_w) = (k - 1, n - k);
    let f = if ssw == 0.0 {
        if ssb == 0.0 {
            return Err(Error::Degenerate("no within- or between-group variance; F undefined".into()));
        }
        f64::INFINITY
    } else {
        (ssb / df_b as f64) / (ssw / df_w as f64)
    };
    Ok(AnovaResult {
        f,
        df_between: df_b,
        df_within: df_w,
        p_value: f_sf(f, df_b as f64, df_w as f64)?,
    })
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Brown–Forsythe form: the ANOVA F of absolute deviations from group medians.
pub fn levene_test(groups: &[Vec<f64>]) -> Result<LeveneResult> {
    check_groups(groups)?;
    let deviations: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let (w, p_value) = match oneway_anova(&deviations) {
        Ok(r) => (r.f, r.p_value),
        // every group constant: equal (zero) spread
        Err(Error::Degenerate(_)) => (0.0, 1.0),
        Err(e) => return Err(e),
    };
    Ok(LeveneResult {
        w,
        p_value,
        center: LeveneCenter::Median,
    })
}

/// Indices with p strictly below `alpha`.
pub fn select_critical(results: &[AnovaResult], alpha: f64) -> Vec<usize> {
    results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.p_value < alpha)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let r = oneway_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).unwrap();
        assert!((r.f - 3.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        assert!((r.p_value - 0.125).abs() < 1e-10);
    }

    #[test]
    fn identical_groups() {
        let g = vec![vec![1.0, 2.0, 3.0]; 3];
        let r = oneway_anova(&g).unwrap();
        assert_eq!((r.f, r.p_value), (0.0, 1.0));
        let l = levene_test(&g).unwrap();
        assert_eq!((l.w, l.p_value), (0.0, 1.0));
    }

    #[test]
    fn levene_detects_spread() {
        let l = levene_test(&[vec![0.0; 4], vec![-10.0, 10.0, -10.0, 10.0]]).unwrap();
        assert!(l.w > 10.0 && l.p_value < 0.05);
    }

    #[test]
    fn degenerate_and_small() {
        assert!(matches!(oneway_anova(&[vec![1.0, 1.0], vec![1.0, 1.0]]), Err(Error::Degenerate(_))));
        assert!(matches!(oneway_anova(&[vec![1.0], vec![1.0, 2.0]]), Err(Error::Data(_))));
        let r = oneway_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn critical_boundary() {
        let mk = |p| AnovaResult {
            f: 1.0,
            df_between: 2,
            df_within: 10,
            p_value: p,
        };
        assert_eq!(select_critical(&[mk(0.04), mk(0.05), mk(0.06)], 0.05), vec![0]);
        assert!(select_critical(&[mk(1.0), mk(1.0)], 0.05).is_empty());
    }
}
