use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::Result;
use crate::imgio::InstanceMap;
use crate::schemes::ClassScheme;

/// 8-connected labeling of a binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub height: usize,
    pub width: usize,
    /// 0 for unset pixels, otherwise 1-based component id.
    pub labels: Vec<u32>,
    pub count: u32,
}

impl Components {
    /// Pixel indices of each component, `members()[k]` holding component `k + 1`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count as usize];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }

    /// Wraps the labeling as an instance map with every component in `class`.
    pub fn into_instances(self, scheme: Arc<ClassScheme>, class: u16) -> Result<InstanceMap> {
        let classes: BTreeMap<u32, u16> = (1..=self.count).map(|id| (id, class)).collect();
        InstanceMap::new(scheme, self.height, self.width, self.labels, classes)
    }
}

/// Offsets of the 8-neighbourhood of `idx` that lie inside the raster.
pub(crate) fn neighbors8(idx: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((idx / width) as isize, (idx % width) as isize);
    const OFFSETS: [(isize, isize); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    OFFSETS.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < height && (nc as usize) < width)
            .then(|| nr as usize * width + nc as usize)
    })
}

/// Labels 8-connected components. Ids start at 1 and follow the raster-scan
/// order of each component's first pixel.
pub fn connected_components(mask: &[bool], height: usize, width: usize) -> Components {
    assert_eq!(mask.len(), height * width, "mask size mismatch");
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for n in neighbors8(p, height, width) {
                if mask[n] && labels[n] == 0 {
                    labels[n] = count;
                    stack.push(n);
                }
            }
        }
    }
    Components {
        height,
        width,
        labels,
        count,
    }
}

/// Unweighted mean `(row, col)` of each instance's pixels.
pub fn centroids(inst: &InstanceMap) -> BTreeMap<u32, (f64, f64)> {
    let w = inst.width();
    let mut acc: BTreeMap<u32, (u64, u64, u64)> = BTreeMap::new();
    for (i, &id) in inst.ids().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let e = acc.entry(id).or_default();
        e.0 += (i / w) as u64;
        e.1 += (i % w) as u64;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(id, (r, c, n))| (id, (r as f64 / n as f64, c as f64 / n as f64)))
        .collect()
}
