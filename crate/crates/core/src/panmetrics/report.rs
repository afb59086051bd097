use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw tallies behind one class score. Only the fields relevant to the metric are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intersection: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_sum: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp: Option<u64>,
    #[serde(rename = "fn", skip_serializing_if = "Option::is_none")]
    pub fn_: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_class: BTreeMap<String, f64>,
    pub aggregate: f64,
    pub params: BTreeMap<String, serde_json::Value>,
    pub counts: BTreeMap<String, ClassCounts>,
    /// Classes without support in either prediction or ground truth.
    pub excluded: Vec<String>,
}

impl MetricReport {
    /// Builds a report whose aggregate is the mean of `per_class`. With no
    /// scored class the aggregate is 1.0 and `params.vacuous` is set.
    pub fn from_scores(metric: &str, per_class: BTreeMap<String, f64>) -> Self {
        let mut params = BTreeMap::new();
        let aggregate = match macro_mean(per_class.values().copied()) {
            Some(m) => m,
            None => {
                params.insert("vacuous".into(), serde_json::Value::Bool(true));
                1.0
            }
        };
        MetricReport {
            metric: metric.into(),
            per_class,
            aggregate,
            params,
            counts: BTreeMap::new(),
            excluded: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("metric report", e))
    }
}

/// Arithmetic mean, `None` for an empty input.
pub fn macro_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0f64, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Final ranking score: mean of micro Dice and summed macro F1.
pub fn mean_track_score(dice_mean: f64, f1_mean: f64) -> Result<f64> {
    for (name, v) in [("dice", dice_mean), ("f1", f1_mean)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!("{name} score {v} is outside [0, 1]")));
        }
    }
    Ok((dice_mean + f1_mean) / 2.0)
}

/// Rounds half-up at `decimals` places, going through a 9-place decimal
/// rendering so that values like 63.475 (stored as 63.4749999…) round up.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let fine: f64 = format!("{value:.9}").parse().unwrap_or(value);
    let scaled = fine * scale;
    let floor = scaled.floor();
    let frac = ((scaled - floor) * 1e6).round() / 1e6;
    let rounded = if frac >= 0.5 { floor + 1.0 } else { floor };
    rounded / scale
}

/// Renders a fraction as a percentage with two decimals, e.g. `0.63475` → `"63.48"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}", round_half_up(fraction * 100.0, 2))
}
