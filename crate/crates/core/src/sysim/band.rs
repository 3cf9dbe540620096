use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upload,
    Download,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub name: String,
    pub uplink_mbps: f64,
    pub downlink_mbps: f64,
}

impl Band {
    pub fn new(name: impl Into<String>, uplink_mbps: f64, downlink_mbps: f64) -> Result<Self> {
        let band = Self {
            name: name.into(),
            uplink_mbps,
            downlink_mbps,
        };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.uplink_mbps > 0.0 && self.downlink_mbps > 0.0) || !self.uplink_mbps.is_finite() || !self.downlink_mbps.is_finite() {
            return Err(Error::Config(format!("band {}: rates must be positive and finite", self.name)));
        }
        Ok(())
    }

    pub fn rate(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Upload => self.uplink_mbps,
            Direction::Download => self.downlink_mbps,
        }
    }
}

/// B3 and B40 as deployed. B3's downlink rate is not published; 18 Mbps is an
/// assumption and only matters in that it is below B40's.
pub fn default_bands() -> Vec<Band> {
    vec![
        Band {
            name: "B3".into(),
            uplink_mbps: 21.0,
            downlink_mbps: 18.0,
        },
        Band {
            name: "B40".into(),
            uplink_mbps: 6.0,
            downlink_mbps: 20.0,
        },
    ]
}

/// Highest nominal rate in the demanded direction; ties go to the
/// lexicographically smaller name.
pub fn select_band(direction: Direction, bands: &[Band]) -> Result<&Band> {
    bands
        .iter()
        .min_by(|a, b| {
            b.rate(direction)
                .total_cmp(&a.rate(direction))
                .then_with(|| a.name.cmp(&b.name))
        })
        .ok_or_else(|| Error::Parameter("no bands to select from".into()))
}

/// Seconds to move `payload_bytes` at a constant `rate_mbps`.
pub fn transmission_time(payload_bytes: u64, rate_mbps: f64) -> Result<f64> {
    if !(rate_mbps > 0.0) {
        return Err(Error::Connectivity(format!("rate {rate_mbps} Mbps")));
    }
    Ok(payload_bytes as f64 * 8.0 / (rate_mbps * 1e6))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deployed_bands() {
        let bands = default_bands();
        assert_eq!(select_band(Direction::Upload, &bands).unwrap().name, "B3");
        assert_eq!(select_band(Direction::Download, &bands).unwrap().name, "B40");
        assert_eq!(select_band(Direction::Upload, &bands[1..]).unwrap().name, "B40");
        assert!(select_band(Direction::Upload, &[]).is_err());
    }

    #[test]
    fn ties_by_name() {
        let bands = vec![Band::new("b", 5.0, 5.0).unwrap(), Band::new("a", 5.0, 5.0).unwrap()];
        assert_eq!(select_band(Direction::Upload, &bands).unwrap().name, "a");
    }

    #[test]
    fn transmission() {
        assert_eq!(transmission_time(75_000_000, 6.0).unwrap(), 100.0);
        assert_eq!(transmission_time(0, 6.0).unwrap(), 0.0);
        assert!((transmission_time(75_000_000, 21.0).unwrap() - 28.571428571).abs() < 1e-6);
        assert!(matches!(transmission_time(10, 0.0), Err(Error::Connectivity(_))));
    }
}
