use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imgio::{check_shape, LabelMap};
use crate::par::{self, Exec};

use super::report::{ClassCounts, MetricReport};

/// Per-class `(intersection, |pred|, |gt|)` for one image.
fn tally(pred: &LabelMap, gt: &LabelMap) -> Vec<(u64, u64, u64)> {
    let k = pred.scheme().len();
    let mut t = vec![(0u64, 0u64, 0u64); k];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        t[p as usize].1 += 1;
        t[g as usize].2 += 1;
        if p == g {
            t[p as usize].0 += 1;
        }
    }
    t
}

/// Dice per foreground class with all images pooled into one canvas.
pub fn micro_dice(pairs: &[(LabelMap, LabelMap)]) -> Result<MetricReport> {
    micro_dice_with(Exec::auto(), pairs)
}

pub fn micro_dice_with(exec: Exec, pairs: &[(LabelMap, LabelMap)]) -> Result<MetricReport> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Usage("micro Dice needs at least one image pair".into()))?;
    let scheme = first.0.scheme().clone();
    for (i, (p, g)) in pairs.iter().enumerate() {
        if p.scheme().id() != scheme.id() || g.scheme().id() != scheme.id() {
            return Err(Error::validation(format!(
                "image {i}: schemes `{}`/`{}` differ from `{}`",
                p.scheme().id(),
                g.scheme().id(),
                scheme.id()
            )));
        }
        check_shape(&format!("image {i}"), p, g)?;
    }

    let tallies = par::map_collect(exec, pairs, |(p, g)| tally(p, g));
    let mut total = vec![(0u64, 0u64, 0u64); scheme.len()];
    for t in &tallies {
        for (acc, v) in total.iter_mut().zip(t) {
            acc.0 += v.0;
            acc.1 += v.1;
            acc.2 += v.2;
        }
    }

    let mut per_class = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut excluded = Vec::new();
    for c in scheme.foreground() {
        let name = scheme.name(c).unwrap_or_default().to_string();
        let (inter, sp, sg) = total[c as usize];
        let size_sum = sp + sg;
        counts.insert(
            name.clone(),
            ClassCounts {
                intersection: Some(inter),
                size_sum: Some(size_sum),
                ..Default::default()
            },
        );
        if size_sum == 0 {
            excluded.push(name);
        } else {
            per_class.insert(name, 2.0 * inter as f64 / size_sum as f64);
        }
    }
    let mut report = MetricReport::from_scores("micro_dice", per_class)
        .with_param("scheme", scheme.id())
        .with_param("images", pairs.len());
    report.counts = counts;
    report.excluded = excluded;
    Ok(report)
}
