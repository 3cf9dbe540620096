use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorFailureProcess {
    /// Per-sensor failure rates (events per day) are drawn from this range.
    pub rate_min_per_day: f64,
    pub rate_max_per_day: f64,
    pub repair_min_s: f64,
    pub repair_max_s: f64,
}

impl Default for SensorFailureProcess {
    fn default() -> Self {
        Self {
            rate_min_per_day: 2.0,
            rate_max_per_day: 6.0,
            repair_min_s: 60.0,
            repair_max_s: 600.0,
        }
    }
}

impl SensorFailureProcess {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_min_per_day > 0.0 && self.rate_min_per_day <= self.rate_max_per_day) {
            return Err(Error::Config("failure rates must satisfy 0 < min <= max".into()));
        }
        if !(self.repair_min_s >= 0.0 && self.repair_min_s <= self.repair_max_s) {
            return Err(Error::Config("repair delays must satisfy 0 <= min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFailure {
    pub sensor: Modality,
    pub down_s: f64,
    pub up_s: f64,
}

/// Failure intervals for each sensor over `days`, sorted by sensor then time.
/// The next failure is scheduled from the end of the previous repair, so
/// intervals of one sensor never overlap.
pub fn failure_schedule<R: Rng + ?Sized>(
    process: &SensorFailureProcess,
    sensors: &[Modality],
    days: f64,
    rng: &mut R,
) -> Result<Vec<SensorFailure>> {
    process.validate()?;
    let horizon = days.max(0.0) * DAY_S;
    let mut out = Vec::new();
    for &sensor in sensors {
        let rate = if process.rate_min_per_day == process.rate_max_per_day {
            process.rate_min_per_day
        } else {
            rng.random_range(process.rate_min_per_day..=process.rate_max_per_day)
        };
        let gap = Exp::new(rate / DAY_S).map_err(|e| Error::Config(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gap.sample(rng);
            if t >= horizon {
                break;
            }
            let repair = if process.repair_min_s == process.repair_max_s {
                process.repair_min_s
            } else {
                rng.random_range(process.repair_min_s..=process.repair_max_s)
            };
            let up = (t + repair).min(horizon);
            out.push(SensorFailure {
                sensor,
                down_s: t,
                up_s: up,
            });
            t = up;
        }
    }
    Ok(out)
}

/// Sensors down at time `t_s`.
pub fn down_at(schedule: &[SensorFailure], t_s: f64) -> Vec<Modality> {
    let mut down: Vec<Modality> = schedule
        .iter()
        .filter(|f| f.down_s <= t_s && t_s < f.up_s)
        .map(|f| f.sensor)
        .collect();
    down.sort();
    down.dedup();
    down
}

pub fn failures_csv(schedule: &[SensorFailure]) -> String {
    let mut out = String::from("sensor,down_s,up_s\n");
    for f in schedule {
        out.push_str(&format!("{},{},{}\n", f.sensor, f.down_s, f.up_s));
    }
    out
}
