use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{read_instances, read_label_png, InstanceMap, LabelMap};
use crate::panmetrics::{
    detection_f1_with, mean_track_score, micro_dice_with, micro_pq_with, panoptic_quality_with,
    MetricReport, DEFAULT_IOU_THRESHOLD, DEFAULT_RADIUS,
};
use crate::par::Exec;
use crate::schemes::{Registry, PUMA_TISSUE6};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Scheme of the tissue label PNGs, which do not record it themselves.
    pub tissue_scheme: String,
    pub radius: f64,
    pub iou_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tissue_scheme: PUMA_TISSUE6.into(),
            radius: DEFAULT_RADIUS,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Dice,
    F1,
    Pq,
    MicroPq,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(MetricKind::Dice),
            "f1" => Ok(MetricKind::F1),
            "pq" => Ok(MetricKind::Pq),
            "micropq" => Ok(MetricKind::MicroPq),
            other => Err(Error::Usage(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_dice: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_f1: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pq: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_pq: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_track_score: Option<f64>,
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Every `*.png` in `dir` as a label map keyed by file stem.
pub fn load_label_dir(dir: &Path, scheme_id: &str, registry: &Registry) -> Result<BTreeMap<String, LabelMap>> {
    let scheme = registry.get(scheme_id)?;
    png_stems(dir)?
        .into_iter()
        .map(|(k, p)| Ok((k, read_label_png(p, scheme.clone())?)))
        .collect()
}

/// Every `*.png` + `*.json` pair in `dir` as an instance map keyed by file stem.
pub fn load_instance_dir(dir: &Path, registry: &Registry) -> Result<BTreeMap<String, InstanceMap>> {
    png_stems(dir)?
        .into_iter()
        .map(|(k, png)| {
            let json = png.with_extension("json");
            if !json.is_file() {
                return Err(Error::Format(format!("{}: no class sidecar", png.display())));
            }
            Ok((k, read_instances(&png, &json, registry)?))
        })
        .collect()
}

/// Pairs predictions with ground truth by frame id; orphans on either side are a usage error.
pub fn align<P, G>(pred: BTreeMap<String, P>, gt: BTreeMap<String, G>) -> Result<Vec<(String, P, G)>> {
    let missing: Vec<&str> = gt.keys().filter(|k| !pred.contains_key(*k)).map(String::as_str).collect();
    let extra: Vec<&str> = pred.keys().filter(|k| !gt.contains_key(*k)).map(String::as_str).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Usage(format!(
            "prediction and ground-truth frames differ; no prediction for [{}], no ground truth for [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut pred = pred;
    Ok(gt
        .into_iter()
        .map(|(k, g)| {
            let p = pred.remove(&k).expect("aligned above");
            (k, p, g)
        })
        .collect())
}

/// `dir/<sub>` when it exists, otherwise `dir` itself.
fn subdir(dir: &Path, sub: &str) -> PathBuf {
    let nested = dir.join(sub);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} is not a directory", dir.display())))
    }
}

fn non_empty<T>(frames: &BTreeMap<String, T>, dir: &Path) -> Result<()> {
    if frames.is_empty() {
        Err(Error::Usage(format!("ground-truth directory {} holds no frames", dir.display())))
    } else {
        Ok(())
    }
}

fn aligned_labels(
    pred_dir: &Path,
    gt_dir: &Path,
    opts: &EvalOptions,
    registry: &Registry,
) -> Result<Vec<(String, LabelMap, LabelMap)>> {
    let gt = load_label_dir(gt_dir, &opts.tissue_scheme, registry)?;
    non_empty(&gt, gt_dir)?;
    align(load_label_dir(pred_dir, &opts.tissue_scheme, registry)?, gt)
}

fn aligned_instances(
    pred_dir: &Path,
    gt_dir: &Path,
    registry: &Registry,
) -> Result<Vec<(String, InstanceMap, InstanceMap)>> {
    let gt = load_instance_dir(gt_dir, registry)?;
    non_empty(&gt, gt_dir)?;
    align(load_instance_dir(pred_dir, registry)?, gt)
}

fn split<P, G>(rows: Vec<(String, P, G)>) -> (Vec<P>, Vec<G>) {
    rows.into_iter().map(|(_, p, g)| (p, g)).unzip()
}

/// One metric over a directory pair. Tissue metrics look in `tissue/` and
/// instance metrics in `nuclei/` when those subdirectories exist.
pub fn eval_metric(
    exec: Exec,
    kind: MetricKind,
    pred_dir: &Path,
    gt_dir: &Path,
    opts: &EvalOptions,
    registry: &Registry,
) -> Result<MetricReport> {
    require_dir(pred_dir)?;
    require_dir(gt_dir)?;
    if kind == MetricKind::Dice {
        let rows = aligned_labels(&subdir(pred_dir, "tissue"), &subdir(gt_dir, "tissue"), opts, registry)?;
        let pairs: Vec<(LabelMap, LabelMap)> = rows.into_iter().map(|(_, p, g)| (p, g)).collect();
        return micro_dice_with(exec, &pairs);
    }
    let rows = aligned_instances(&subdir(pred_dir, "nuclei"), &subdir(gt_dir, "nuclei"), registry)?;
    let (pred, gt) = split(rows);
    match kind {
        MetricKind::F1 => detection_f1_with(exec, &pred, &gt, opts.radius),
        MetricKind::Pq => panoptic_quality_with(exec, &pred, &gt, opts.iou_threshold),
        MetricKind::MicroPq => micro_pq_with(exec, &pred, &gt, opts.iou_threshold),
        MetricKind::Dice => unreachable!(),
    }
}

/// Scores a pipeline output directory against a ground-truth directory with
/// the same `tissue/` and `nuclei/` layout. Either part may be absent from the
/// ground truth, but not both.
pub fn eval_report(
    exec: Exec,
    pred_dir: &Path,
    gt_dir: &Path,
    opts: &EvalOptions,
    registry: &Registry,
) -> Result<EvalReport> {
    require_dir(pred_dir)?;
    require_dir(gt_dir)?;
    let (gt_tissue, gt_nuclei) = (gt_dir.join("tissue"), gt_dir.join("nuclei"));
    if !gt_tissue.is_dir() && !gt_nuclei.is_dir() {
        return Err(Error::Usage(format!(
            "ground-truth directory {} has neither tissue/ nor nuclei/",
            gt_dir.display()
        )));
    }
    let mut report = EvalReport {
        frames: Vec::new(),
        micro_dice: None,
        detection_f1: None,
        pq: None,
        micro_pq: None,
        mean_track_score: None,
    };
    let mut frames = std::collections::BTreeSet::new();
    if gt_tissue.is_dir() {
        let rows = aligned_labels(&pred_dir.join("tissue"), &gt_tissue, opts, registry)?;
        frames.extend(rows.iter().map(|r| r.0.clone()));
        let pairs: Vec<(LabelMap, LabelMap)> = rows.into_iter().map(|(_, p, g)| (p, g)).collect();
        report.micro_dice = Some(micro_dice_with(exec, &pairs)?);
    }
    if gt_nuclei.is_dir() {
        let rows = aligned_instances(&pred_dir.join("nuclei"), &gt_nuclei, registry)?;
        frames.extend(rows.iter().map(|r| r.0.clone()));
        let (pred, gt) = split(rows);
        report.detection_f1 = Some(detection_f1_with(exec, &pred, &gt, opts.radius)?);
        report.pq = Some(panoptic_quality_with(exec, &pred, &gt, opts.iou_threshold)?);
        report.micro_pq = Some(micro_pq_with(exec, &pred, &gt, opts.iou_threshold)?);
    }
    if let (Some(d), Some(f)) = (&report.micro_dice, &report.detection_f1) {
        report.mean_track_score = Some(mean_track_score(d.aggregate, f.aggregate)?);
    }
    report.frames = frames.into_iter().collect();
    Ok(report)
}
