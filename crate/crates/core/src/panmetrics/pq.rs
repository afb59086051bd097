use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgio::InstanceMap;
use crate::par::{self, Exec};

use super::detection::check_instance_lists;
use super::report::{ClassCounts, MetricReport};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PqMatch {
    pub pred: u32,
    pub gt: u32,
    pub class: u16,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PqStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl PqStats {
    /// `Σ IoU / (TP + FP/2 + FN/2)`, `None` when there is nothing to score.
    pub fn pq(&self) -> Option<f64> {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        (denom > 0.0).then(|| self.iou_sum / denom)
    }
}

fn check_threshold(iou_threshold: f64) -> Result<()> {
    // matches are only guaranteed unique for thresholds of at least one half
    if !(0.5..1.0).contains(&iou_threshold) {
        return Err(Error::validation(format!(
            "IoU threshold {iou_threshold} must lie in [0.5, 1)"
        )));
    }
    Ok(())
}

fn areas(ids: &[u32]) -> HashMap<u32, u64> {
    let mut a = HashMap::new();
    for &id in ids {
        if id != 0 {
            *a.entry(id).or_insert(0) += 1;
        }
    }
    a
}

/// Same-class instance pairs with IoU above `iou_threshold`, sorted by pred id.
pub fn pq_matches(pred: &InstanceMap, gt: &InstanceMap, iou_threshold: f64) -> Result<Vec<PqMatch>> {
    check_threshold(iou_threshold)?;
    crate::imgio::check_shape("pq", pred, gt)?;
    let pa = areas(pred.ids());
    let ga = areas(gt.ids());
    let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
    for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
        if p != 0 && g != 0 && pred.class_of(p) == gt.class_of(g) {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    let mut out: Vec<PqMatch> = inter
        .into_iter()
        .filter_map(|((p, g), i)| {
            let union = pa[&p] + ga[&g] - i;
            let iou = i as f64 / union as f64;
            (iou > iou_threshold).then(|| PqMatch {
                pred: p,
                gt: g,
                class: pred.class_of(p).unwrap_or(0),
                iou,
            })
        })
        .collect();
    out.sort_by_key(|m| (m.pred, m.gt));
    Ok(out)
}

/// Per-class match statistics for one image.
pub fn pq_image_stats(
    pred: &InstanceMap,
    gt: &InstanceMap,
    iou_threshold: f64,
) -> Result<BTreeMap<u16, PqStats>> {
    let matches = pq_matches(pred, gt, iou_threshold)?;
    let mut stats: BTreeMap<u16, PqStats> = BTreeMap::new();
    let mut matched_pred = std::collections::BTreeSet::new();
    let mut matched_gt = std::collections::BTreeSet::new();
    for m in &matches {
        let s = stats.entry(m.class).or_default();
        s.tp += 1;
        s.iou_sum += m.iou;
        matched_pred.insert(m.pred);
        matched_gt.insert(m.gt);
    }
    for (&id, &c) in pred.classes() {
        if !matched_pred.contains(&id) {
            stats.entry(c).or_default().fp += 1;
        }
    }
    for (&id, &c) in gt.classes() {
        if !matched_gt.contains(&id) {
            stats.entry(c).or_default().fn_ += 1;
        }
    }
    Ok(stats)
}

fn per_image(
    exec: Exec,
    pred: &[InstanceMap],
    gt: &[InstanceMap],
    iou_threshold: f64,
) -> Result<Vec<BTreeMap<u16, PqStats>>> {
    check_instance_lists(pred, gt)?;
    check_threshold(iou_threshold)?;
    if gt.is_empty() {
        return Err(Error::Usage("panoptic quality needs at least one image".into()));
    }
    par::map_indices(exec, pred.len(), |i| pq_image_stats(&pred[i], &gt[i], iou_threshold))
        .into_iter()
        .collect()
}

/// Class PQ averaged over the images whose ground truth contains the class;
/// the aggregate ("mean PQ") averages those class values.
pub fn panoptic_quality(pred: &[InstanceMap], gt: &[InstanceMap], iou_threshold: f64) -> Result<MetricReport> {
    panoptic_quality_with(Exec::auto(), pred, gt, iou_threshold)
}

pub fn panoptic_quality_with(
    exec: Exec,
    pred: &[InstanceMap],
    gt: &[InstanceMap],
    iou_threshold: f64,
) -> Result<MetricReport> {
    let images = per_image(exec, pred, gt, iou_threshold)?;
    let scheme = gt[0].scheme().clone();
    let mut per_class = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut excluded = Vec::new();
    for c in scheme.foreground() {
        let name = scheme.name(c).unwrap_or_default().to_string();
        let mut sum = 0.0;
        let mut n = 0u64;
        for (stats, g) in images.iter().zip(gt) {
            if !g.classes().values().any(|&k| k == c) {
                continue;
            }
            if let Some(pq) = stats.get(&c).and_then(PqStats::pq) {
                sum += pq;
                n += 1;
            }
        }
        counts.insert(
            name.clone(),
            ClassCounts {
                images: Some(n),
                ..Default::default()
            },
        );
        if n == 0 {
            excluded.push(name);
        } else {
            per_class.insert(name, sum / n as f64);
        }
    }
    let mut report = MetricReport::from_scores("pq", per_class)
        .with_param("iou_threshold", iou_threshold)
        .with_param("image_rule", "mean_over_images_with_class_in_gt")
        .with_param("scheme", scheme.id())
        .with_param("images", pred.len());
    report.counts = counts;
    report.excluded = excluded;
    Ok(report)
}

/// PQ per class with all images pooled into one canvas.
pub fn micro_pq(pred: &[InstanceMap], gt: &[InstanceMap], iou_threshold: f64) -> Result<MetricReport> {
    micro_pq_with(Exec::auto(), pred, gt, iou_threshold)
}

pub fn micro_pq_with(
    exec: Exec,
    pred: &[InstanceMap],
    gt: &[InstanceMap],
    iou_threshold: f64,
) -> Result<MetricReport> {
    let images = per_image(exec, pred, gt, iou_threshold)?;
    let scheme = gt[0].scheme().clone();
    let mut pooled: BTreeMap<u16, PqStats> = scheme.foreground().map(|c| (c, PqStats::default())).collect();
    for stats in &images {
        for (c, s) in stats {
            let acc = pooled.entry(*c).or_default();
            acc.tp += s.tp;
            acc.fp += s.fp;
            acc.fn_ += s.fn_;
            acc.iou_sum += s.iou_sum;
        }
    }
    let mut per_class = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut excluded = Vec::new();
    for (c, s) in pooled {
        let name = scheme.name(c).unwrap_or_default().to_string();
        counts.insert(
            name.clone(),
            ClassCounts {
                tp: Some(s.tp),
                fp: Some(s.fp),
                fn_: Some(s.fn_),
                iou_sum: Some(s.iou_sum),
                ..Default::default()
            },
        );
        match s.pq() {
            Some(v) => {
                per_class.insert(name, v);
            }
            None => excluded.push(name),
        }
    }
    let mut report = MetricReport::from_scores("micro_pq", per_class)
        .with_param("iou_threshold", iou_threshold)
        .with_param("scheme", scheme.id())
        .with_param("images", pred.len());
    report.counts = counts;
    report.excluded = excluded;
    Ok(report)
}
