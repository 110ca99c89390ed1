use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three data sources a subject can contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ShortAxis,
    FourChamber,
    Ehr,
}

impl Modality {
    pub const IMAGING: [Modality; 2] = [Modality::ShortAxis, Modality::FourChamber];

    pub fn is_imaging(self) -> bool {
        !matches!(self, Modality::Ehr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::ShortAxis => "short_axis",
            Modality::FourChamber => "four_chamber",
            Modality::Ehr => "ehr",
        }
    }

    /// Short label used in reports ("SA", "FC", "EHR").
    pub fn abbrev(self) -> &'static str {
        match self {
            Modality::ShortAxis => "SA",
            Modality::FourChamber => "FC",
            Modality::Ehr => "EHR",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown modality '{0}'")]
pub struct UnknownModality(pub String);

impl FromStr for Modality {
    type Err = UnknownModality;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "short_axis" | "SA" | "sa" => Ok(Modality::ShortAxis),
            "four_chamber" | "FC" | "fc" => Ok(Modality::FourChamber),
            "ehr" | "EHR" => Ok(Modality::Ehr),
            other => Err(UnknownModality(other.to_string())),
        }
    }
}
