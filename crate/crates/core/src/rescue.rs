//! Necrosis rescue: stage-1 regions of the target class that overlap the
//! refined stage-4 prediction are copied into it wholesale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{check_shape, LabelMap};
use crate::panmetrics::connected_components;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescueParams {
    pub enabled: bool,
    pub target_class: u16,
}

impl RescueParams {
    /// Enabled, targeting the scheme's `necrosis` class.
    pub fn necrosis(scheme: &crate::schemes::ClassScheme) -> Result<Self> {
        Ok(RescueParams {
            enabled: true,
            target_class: scheme.require("necrosis")?,
        })
    }
}

pub fn necrosis_rescue(stage1: &LabelMap, stage4: &LabelMap, params: &RescueParams) -> Result<LabelMap> {
    if stage1.scheme().id() != stage4.scheme().id() {
        return Err(Error::validation(format!(
            "stage-1 map is `{}` but stage-4 map is `{}`",
            stage1.scheme().id(),
            stage4.scheme().id()
        )));
    }
    check_shape("rescue", stage1, stage4)?;
    let t = params.target_class;
    if t == 0 || t as usize >= stage4.scheme().len() {
        return Err(Error::validation(format!(
            "rescue target {t} is not a foreground class of `{}`",
            stage4.scheme().id()
        )));
    }
    if !params.enabled {
        return Ok(stage4.clone());
    }

    let mask: Vec<bool> = stage1.data().iter().map(|&v| v == t).collect();
    let comps = connected_components(&mask, stage1.height(), stage1.width());
    let mut out = stage4.data().to_vec();
    for pixels in comps.members() {
        if pixels.iter().any(|&p| stage4.data()[p] == t) {
            for p in pixels {
                out[p] = t;
            }
        }
    }
    LabelMap::new(stage4.scheme().clone(), stage4.height(), stage4.width(), out)
}
