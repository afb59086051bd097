//! Nuclei fusion: instance classes by majority vote over a semantic class
//! map, and replacement of instance masks in the image border band.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{check_shape, InstanceMap, LabelMap};
use crate::panmetrics::{connected_components, neighbors8};
use crate::par::{self, Exec};

/// What an instance becomes when every one of its pixels is background in the class map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    #[default]
    KeepOriginal,
    LowestForeground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteParams {
    pub fallback_policy: FallbackPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BorderParams {
    pub margin: usize,
}

impl Default for BorderParams {
    fn default() -> Self {
        BorderParams { margin: 16 }
    }
}

fn check_inputs(inst: &InstanceMap, class_map: &LabelMap) -> Result<()> {
    if inst.scheme().id() != class_map.scheme().id() {
        return Err(Error::validation(format!(
            "instances use `{}` but the class map uses `{}`",
            inst.scheme().id(),
            class_map.scheme().id()
        )));
    }
    check_shape("nuclei fusion", inst, class_map)
}

/// Most frequent entry of `hist` among indices ≥ 1, lowest index on ties.
fn vote(hist: &[u64]) -> Option<u16> {
    let mut best: Option<(u16, u64)> = None;
    for (c, &n) in hist.iter().enumerate().skip(1) {
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((c as u16, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Reassigns every instance's class by majority vote of the class map over its
/// pixels, ignoring background votes. Instance geometry is untouched.
pub fn majority_vote_classify(inst: &InstanceMap, class_map: &LabelMap, params: &VoteParams) -> Result<InstanceMap> {
    majority_vote_classify_with(Exec::auto(), inst, class_map, params)
}

pub fn majority_vote_classify_with(
    exec: Exec,
    inst: &InstanceMap,
    class_map: &LabelMap,
    params: &VoteParams,
) -> Result<InstanceMap> {
    check_inputs(inst, class_map)?;
    let k = class_map.scheme().len();
    let (h, w) = (inst.height(), inst.width());
    let band = 64usize;
    let partial = par::map_indices(exec, h.div_ceil(band), |b| {
        let mut t: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        let lo = b * band * w;
        let hi = ((b + 1) * band).min(h) * w;
        for i in lo..hi {
            let id = inst.ids()[i];
            if id != 0 {
                t.entry(id).or_insert_with(|| vec![0; k])[class_map.data()[i] as usize] += 1;
            }
        }
        t
    });
    let mut tallies: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for t in partial {
        for (id, hist) in t {
            let acc = tallies.entry(id).or_insert_with(|| vec![0; k]);
            acc.iter_mut().zip(hist).for_each(|(a, v)| *a += v);
        }
    }

    let classes = inst
        .classes()
        .iter()
        .map(|(&id, &orig)| {
            let voted = tallies.get(&id).and_then(|h| vote(h));
            let class = match (voted, params.fallback_policy) {
                (Some(c), _) => c,
                (None, FallbackPolicy::KeepOriginal) => orig,
                (None, FallbackPolicy::LowestForeground) => 1,
            };
            (id, class)
        })
        .collect();
    InstanceMap::new(inst.scheme().clone(), h, w, inst.ids().to_vec(), classes)
}

/// True when pixel `i` lies closer than `margin` to any image edge.
fn in_band(i: usize, h: usize, w: usize, margin: usize) -> bool {
    let (r, c) = (i / w, i % w);
    r.min(c).min(h - 1 - r).min(w - 1 - c) < margin
}

/// Replaces instance masks inside the border band with the class map.
///
/// Band instance pixels are erased. Each 8-connected component of
/// non-background class-map pixels inside the band then either joins the
/// surviving interior instance it touches most (lowest id on ties) or becomes
/// a new instance classed by its majority class-map label.
pub fn border_correct(inst: &InstanceMap, class_map: &LabelMap, params: &BorderParams) -> Result<InstanceMap> {
    check_inputs(inst, class_map)?;
    let (h, w) = (inst.height(), inst.width());
    let m = params.margin;
    if m == 0 {
        return Ok(inst.clone());
    }
    if 2 * m >= h.min(w) {
        return Err(Error::validation(format!(
            "border margin {m} must be below half the smaller image side ({h}x{w})"
        )));
    }

    let mut ids = inst.ids().to_vec();
    for (i, id) in ids.iter_mut().enumerate() {
        if in_band(i, h, w, m) {
            *id = 0;
        }
    }
    let surviving: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != 0).collect();
    let mut classes: BTreeMap<u32, u16> = inst
        .classes()
        .iter()
        .filter(|(id, _)| surviving.contains(id))
        .map(|(&id, &c)| (id, c))
        .collect();

    let mask: Vec<bool> = (0..h * w)
        .map(|i| class_map.data()[i] != 0 && in_band(i, h, w, m))
        .collect();
    let comps = connected_components(&mask, h, w);
    let mut next_id = inst.classes().keys().next_back().copied().unwrap_or(0) + 1;
    let k = class_map.scheme().len();

    for pixels in comps.members() {
        // distinct interior instance pixels touching the component
        let mut contact: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        for &p in &pixels {
            for n in neighbors8(p, h, w) {
                if !in_band(n, h, w, m) && ids[n] != 0 {
                    contact.entry(ids[n]).or_default().insert(n);
                }
            }
        }
        let target = contact
            .iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
            .map(|(&id, _)| id);
        let id = match target {
            Some(id) => id,
            None => {
                let mut hist = vec![0u64; k];
                for &p in &pixels {
                    hist[class_map.data()[p] as usize] += 1;
                }
                let id = next_id;
                next_id += 1;
                classes.insert(id, vote(&hist).expect("component pixels are foreground"));
                id
            }
        };
        for &p in &pixels {
            ids[p] = id;
        }
    }
    InstanceMap::new(inst.scheme().clone(), h, w, ids, classes)
}
