//! Time-of-day bandwidth factor: a day/night baseline, Gaussian dips around
//! mealtimes and AR(1) noise, clamped to [0, 1].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceParams {
    pub base_day: f64,
    pub base_night: f64,
    /// Daytime is [day_start_h, day_end_h).
    pub day_start_h: f64,
    pub day_end_h: f64,
    pub dip_hours: Vec<f64>,
    pub dip_sigma_h: f64,
    pub dip_depth: f64,
    /// Stationary standard deviation of the AR(1) noise.
    pub noise_sd: f64,
    pub noise_phi: f64,
    pub resolution_s: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            base_day: 0.75,
            base_night: 0.9,
            day_start_h: 7.0,
            day_end_h: 22.0,
            dip_hours: vec![12.0, 17.0, 19.0],
            dip_sigma_h: 0.5,
            dip_depth: 0.3,
            noise_sd: 0.05,
            noise_phi: 0.9,
            resolution_s: 60.0,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("base_day", self.base_day), ("base_night", self.base_night)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("trace {name} must lie in [0, 1]")));
            }
        }
        if !(self.resolution_s > 0.0) || !(self.dip_sigma_h > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Config("trace resolution, dip sigma and noise must be positive".into()));
        }
        if !(self.noise_phi.abs() < 1.0) {
            return Err(Error::Config("trace noise_phi must lie in (-1, 1)".into()));
        }
        Ok(())
    }

    /// Noise-free factor at time `t_s`.
    pub fn mean_factor(&self, t_s: f64) -> f64 {
        let hour = t_s.rem_euclid(DAY_S) / 3600.0;
        let base = if hour >= self.day_start_h && hour < self.day_end_h {
            self.base_day
        } else {
            self.base_night
        };
        let dips: f64 = self
            .dip_hours
            .iter()
            .map(|&c| {
                // nearest occurrence, so a dip near midnight wraps
                let d = (hour - c + 12.0).rem_euclid(24.0) - 12.0;
                self.dip_depth * (-d * d / (2.0 * self.dip_sigma_h * self.dip_sigma_h)).exp()
            })
            .sum();
        base - dips
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    params: TraceParams,
    noise: Vec<f64>,
}

impl BandwidthTrace {
    /// Draws the noise path for `[0, horizon_s)`; times past the horizon reuse
    /// it cyclically.
    pub fn new<R: Rng + ?Sized>(params: TraceParams, horizon_s: f64, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let steps = ((horizon_s.max(0.0) / params.resolution_s).ceil() as usize).max(1);
        let innov = params.noise_sd * (1.0 - params.noise_phi * params.noise_phi).sqrt();
        let mut noise = Vec::with_capacity(steps);
        let mut e = params.noise_sd * rng.sample::<f64, _>(StandardNormal);
        for _ in 0..steps {
            noise.push(e);
            e = params.noise_phi * e + innov * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(Self { params, noise })
    }

    /// A flat trace, for tests and what-if runs.
    pub fn constant(factor: f64) -> Self {
        let f = factor.clamp(0.0, 1.0);
        Self {
            params: TraceParams {
                base_day: f,
                base_night: f,
                dip_hours: Vec::new(),
                noise_sd: 0.0,
                ..TraceParams::default()
            },
            noise: vec![0.0],
        }
    }

    pub fn params(&self) -> &TraceParams {
        &self.params
    }

    pub fn resolution_s(&self) -> f64 {
        self.params.resolution_s
    }

    fn step(&self, t_s: f64) -> usize {
        (t_s.max(0.0) / self.params.resolution_s).floor() as usize
    }

    pub fn factor(&self, t_s: f64) -> f64 {
        let step = self.step(t_s);
        let t0 = step as f64 * self.params.resolution_s;
        (self.params.mean_factor(t0) + self.noise[step % self.noise.len()]).clamp(0.0, 1.0)
    }

    /// `(t_s, factor)` at every resolution step in `[0, hours)`.
    pub fn rows(&self, hours: f64) -> Vec<(f64, f64)> {
        let n = (hours * 3600.0 / self.params.resolution_s).round() as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 * self.params.resolution_s;
                (t, self.factor(t))
            })
            .collect()
    }

    /// Time at which `bits` have been sent at `nominal_mbps` scaled by the
    /// trace, starting at `start_s`. None if not done by `deadline_s`.
    pub fn finish_time(&self, start_s: f64, bits: f64, nominal_mbps: f64, deadline_s: f64) -> Option<f64> {
        if bits <= 0.0 {
            return Some(start_s);
        }
        let res = self.params.resolution_s;
        let mut t = start_s;
        let mut left = bits;
        while t < deadline_s {
            let boundary = ((self.step(t) + 1) as f64 * res).min(deadline_s);
            let rate = nominal_mbps * 1e6 * self.factor(t);
            let span = boundary - t;
            if rate > 0.0 && rate * span >= left {
                return Some(t + left / rate);
            }
            left -= rate * span;
            t = boundary;
        }
        None
    }
}

pub fn trace_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("t_s,value\n");
    for (t, v) in rows {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn factor_stays_in_unit_interval() {
        let params = TraceParams {
            noise_sd: 0.5,
            ..TraceParams::default()
        };
        let trace = BandwidthTrace::new(params, 2.0 * DAY_S, &mut rng_for(1, &[0])).unwrap();
        for (_, v) in trace.rows(48.0) {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn mealtime_dips() {
        let p = TraceParams::default();
        assert!(p.mean_factor(12.0 * 3600.0) < p.mean_factor(10.0 * 3600.0) - 0.25);
        assert!(p.mean_factor(3.0 * 3600.0) > p.mean_factor(10.0 * 3600.0));
    }

    #[test]
    fn constant_trace_finish_time() {
        let trace = BandwidthTrace::constant(0.5);
        // 6 Mbps at half capacity: 3e6 bits take one second
        let t = trace.finish_time(100.0, 3e6, 6.0, 1e9).unwrap();
        assert!((t - 101.0).abs() < 1e-9);
        assert_eq!(BandwidthTrace::constant(0.0).finish_time(0.0, 1.0, 6.0, 1000.0), None);
    }

    #[test]
    fn row_count() {
        let trace = BandwidthTrace::new(TraceParams::default(), DAY_S, &mut rng_for(1, &[0])).unwrap();
        assert_eq!(trace.rows(24.0).len(), 1440);
    }
}
