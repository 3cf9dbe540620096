use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Sensor modality. The declaration order is the canonical manifest order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Depth,
    Radar,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Depth, Modality::Radar, Modality::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Radar => "radar",
            Modality::Audio => "audio",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Flattened per-sample feature width at desk scale. Full-scale inputs are
    /// depth `[16,112,112]`, radar `[20,2,16,32,16]` and audio `[20,87]`.
    pub fn input_dim(self) -> usize {
        match self {
            Modality::Depth => 64,
            Modality::Radar => 32,
            Modality::Audio => 16,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depth" => Ok(Modality::Depth),
            "radar" => Ok(Modality::Radar),
            "audio" => Ok(Modality::Audio),
            other => Err(Error::Modality(format!("unknown modality `{other}`"))),
        }
    }
}
