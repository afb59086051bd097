use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgio::InstanceMap;
use crate::par::{self, Exec};

use super::components::centroids;
use super::report::{ClassCounts, MetricReport};

pub const DEFAULT_RADIUS: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred: u32,
    pub gt: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Result of centroid matching on one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectionMatch {
    pub pairs: Vec<MatchedPair>,
    /// Indexed by foreground class.
    pub per_class: BTreeMap<u16, Tally>,
}

pub(crate) fn check_instance_lists(pred: &[InstanceMap], gt: &[InstanceMap]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Usage(format!(
            "{} predicted images but {} ground-truth images",
            pred.len(),
            gt.len()
        )));
    }
    let Some(first) = gt.first() else {
        return Ok(());
    };
    let id = first.scheme().id();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.scheme().id() != id || g.scheme().id() != id {
            return Err(Error::validation(format!(
                "image {i}: schemes `{}`/`{}` differ from `{id}`",
                p.scheme().id(),
                g.scheme().id()
            )));
        }
        crate::imgio::check_shape(&format!("image {i}"), p, g)?;
    }
    Ok(())
}

/// Greedy same-class centroid matching: candidate pairs within `radius` are
/// taken in ascending distance, ties broken by `(pred id, gt id)`.
pub fn match_detections(pred: &InstanceMap, gt: &InstanceMap, radius: f64) -> Result<DetectionMatch> {
    if pred.scheme().id() != gt.scheme().id() {
        return Err(Error::validation(format!(
            "schemes `{}` and `{}` differ",
            pred.scheme().id(),
            gt.scheme().id()
        )));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::validation(format!("radius {radius} must be finite and non-negative")));
    }
    let pc = centroids(pred);
    let gc = centroids(gt);

    let mut candidates = Vec::new();
    for (&pid, &(pr, pcol)) in &pc {
        let pclass = pred.class_of(pid);
        for (&gid, &(gr, gcol)) in &gc {
            if gt.class_of(gid) != pclass {
                continue;
            }
            let d = ((pr - gr).powi(2) + (pcol - gcol).powi(2)).sqrt();
            if d <= radius {
                candidates.push(MatchedPair {
                    pred: pid,
                    gt: gid,
                    distance: d,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });

    let mut used_pred = std::collections::BTreeSet::new();
    let mut used_gt = std::collections::BTreeSet::new();
    let mut out = DetectionMatch::default();
    for c in pred.scheme().foreground() {
        out.per_class.insert(c, Tally::default());
    }
    for cand in candidates {
        if used_pred.contains(&cand.pred) || used_gt.contains(&cand.gt) {
            continue;
        }
        used_pred.insert(cand.pred);
        used_gt.insert(cand.gt);
        let class = pred.class_of(cand.pred).expect("centroid ids are classed");
        out.per_class.entry(class).or_default().tp += 1;
        out.pairs.push(cand);
    }
    for (&id, &class) in pred.classes() {
        if !used_pred.contains(&id) {
            out.per_class.entry(class).or_default().fp += 1;
        }
    }
    for (&id, &class) in gt.classes() {
        if !used_gt.contains(&id) {
            out.per_class.entry(class).or_default().fn_ += 1;
        }
    }
    Ok(out)
}

/// Mean over nuclei classes of detection F1, counts summed over images.
pub fn detection_f1(pred: &[InstanceMap], gt: &[InstanceMap], radius: f64) -> Result<MetricReport> {
    detection_f1_with(Exec::auto(), pred, gt, radius)
}

pub fn detection_f1_with(
    exec: Exec,
    pred: &[InstanceMap],
    gt: &[InstanceMap],
    radius: f64,
) -> Result<MetricReport> {
    check_instance_lists(pred, gt)?;
    let first = gt
        .first()
        .ok_or_else(|| Error::Usage("detection F1 needs at least one image".into()))?;
    let scheme = first.scheme().clone();
    let matches = par::map_indices(exec, pred.len(), |i| match_detections(&pred[i], &gt[i], radius));

    let mut totals: BTreeMap<u16, Tally> = scheme.foreground().map(|c| (c, Tally::default())).collect();
    for m in matches {
        for (c, t) in m?.per_class {
            totals.entry(c).or_default().add(&t);
        }
    }

    let mut per_class = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut excluded = Vec::new();
    for (c, t) in totals {
        let name = scheme.name(c).unwrap_or_default().to_string();
        counts.insert(
            name.clone(),
            ClassCounts {
                tp: Some(t.tp),
                fp: Some(t.fp),
                fn_: Some(t.fn_),
                ..Default::default()
            },
        );
        let denom = 2 * t.tp + t.fp + t.fn_;
        if denom == 0 {
            excluded.push(name);
        } else {
            per_class.insert(name, 2.0 * t.tp as f64 / denom as f64);
        }
    }
    let mut report = MetricReport::from_scores("detection_f1", per_class)
        .with_param("radius", radius)
        .with_param("matching", "greedy_ascending_distance_class_aware")
        .with_param("scheme", scheme.id())
        .with_param("images", pred.len());
    report.counts = counts;
    report.excluded = excluded;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::{get_scheme, NUCLEI_TRACK1, NUCLEI_TRACK2};

    /// `(row, col, class)` single-pixel nuclei on a 64×64 canvas.
    fn dots(points: &[(usize, usize, u16)]) -> InstanceMap {
        let s = get_scheme(NUCLEI_TRACK1).unwrap();
        let mut ids = vec![0u32; 64 * 64];
        let mut classes = BTreeMap::new();
        for (i, &(r, c, k)) in points.iter().enumerate() {
            ids[r * 64 + c] = i as u32 + 1;
            classes.insert(i as u32 + 1, k);
        }
        InstanceMap::new(s, 64, 64, ids, classes).unwrap()
    }

    #[test]
    fn identical() {
        let g = dots(&[(5, 5, 1), (30, 30, 2), (50, 10, 3)]);
        let r = detection_f1(&[g.clone()], &[g], 15.0).unwrap();
        assert_eq!(r.per_class.len(), 3);
        assert!(r.per_class.values().all(|&v| v == 1.0));
    }

    #[test]
    fn beyond_radius() {
        let g = dots(&[(10, 10, 1)]);
        let p = dots(&[(10, 30, 1)]);
        let r = detection_f1(&[p], &[g], 15.0).unwrap();
        assert_eq!(r.per_class["tumor"], 0.0);
        assert_eq!(r.counts["tumor"].fp, Some(1));
        assert_eq!(r.counts["tumor"].fn_, Some(1));
    }

    #[test]
    fn radius_is_inclusive_and_class_aware() {
        let g = dots(&[(10, 10, 1)]);
        let p = dots(&[(10, 25, 1)]);
        assert_eq!(detection_f1(&[p], &[g.clone()], 15.0).unwrap().per_class["tumor"], 1.0);
        let p = dots(&[(10, 11, 2)]);
        let m = match_detections(&p, &g, 15.0).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.per_class[&1].fn_, 1);
        assert_eq!(m.per_class[&2].fp, 1);
    }

    #[test]
    fn greedy_order_and_ties() {
        // p1 is 3 px from g1 and 2 px from g2; p2 is 2 px from g2 and 7 px from g1.
        // (p1,g2) wins the distance-2 tie on pred id, so p2 falls back to g1.
        let g = dots(&[(10, 7, 1), (10, 12, 1)]);
        let p = dots(&[(10, 10, 1), (10, 14, 1)]);
        let m = match_detections(&p, &g, 15.0).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert_eq!((m.pairs[0].pred, m.pairs[0].gt), (1, 2));
        assert_eq!((m.pairs[1].pred, m.pairs[1].gt), (2, 1));
    }

    #[test]
    fn scheme_mismatch() {
        let g = dots(&[(1, 1, 1)]);
        let p = InstanceMap::empty(get_scheme(NUCLEI_TRACK2).unwrap(), 64, 64);
        assert!(matches!(detection_f1(&[p], &[g], 15.0), Err(Error::Validation(_))));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let g = dots(&[(5, 5, 1), (30, 30, 2), (50, 10, 3)]);
        let p = dots(&[(6, 5, 1), (31, 38, 2), (50, 40, 3)]);
        let preds = vec![p; 8];
        let gts = vec![g; 8];
        let a = detection_f1_with(Exec::Sequential, &preds, &gts, 15.0).unwrap();
        let b = detection_f1_with(Exec::Parallel, &preds, &gts, 15.0).unwrap();
        assert_eq!(a, b);
    }
}
