//! Primary vs metastatic frame decision from an extended 11-class tissue map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::LabelMap;
use crate::schemes::{group_counts, PUMA_EXT11};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameType {
    Primary,
    Metastatic,
}

impl FrameType {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameType::Primary => "primary",
            FrameType::Metastatic => "metastatic",
        }
    }
}

impl std::fmt::Display for FrameType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FrameType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(FrameType::Primary),
            "metastatic" => Ok(FrameType::Metastatic),
            other => Err(Error::Usage(format!("unknown frame type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierParams {
    /// Primary-epidermis pixels needed for the epidermis rule to fire.
    pub epidermis_min_pixels: u64,
    /// When false only the pixel-majority rule is applied.
    pub epidermis_rule: bool,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            epidermis_min_pixels: 1,
            epidermis_rule: true,
        }
    }
}

/// Primary if enough primary-epidermis pixels are present, else primary if
/// primary pixels strictly outnumber metastatic pixels, else metastatic.
pub fn classify_frame(ext_map: &LabelMap, params: &ClassifierParams) -> Result<FrameType> {
    let scheme = ext_map.scheme();
    if scheme.id() != PUMA_EXT11 {
        return Err(Error::validation(format!(
            "frame classification needs a `{PUMA_EXT11}` map, got `{}`",
            scheme.id()
        )));
    }
    if params.epidermis_min_pixels < 1 {
        return Err(Error::validation("epidermis_min_pixels must be at least 1"));
    }
    if params.epidermis_rule {
        let epidermis = scheme.require("primary_epidermis")?;
        let n = ext_map.data().iter().filter(|&&v| v == epidermis).count() as u64;
        if n >= params.epidermis_min_pixels {
            return Ok(FrameType::Primary);
        }
    }
    let g = group_counts(ext_map);
    Ok(if g.primary > g.metastatic {
        FrameType::Primary
    } else {
        FrameType::Metastatic
    })
}
