use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{FrameBundle, Manifest, SegformerSet, StagePair};
use crate::error::{Error, Result};
use crate::framecls::FrameType;
use crate::imgio::{
    write_instances, write_label_png, write_pmap, write_rgb_png, InstanceMap, LabelMap, ProbabilityMap,
    RgbImage,
};
use crate::schemes::{ClassScheme, Registry, NUCLEI_TRACK1, NUCLEI_TRACK2, PUMA_EXT11, PUMA_TISSUE6};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const BACKGROUND: u16 = 0;
const TUMOR: u16 = 1;
const STROMA: u16 = 2;
const EPIDERMIS: u16 = 3;
const NECROSIS: u16 = 4;
const VESSEL: u16 = 5;

/// Planted faults, each of which one pipeline module is meant to repair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Defects {
    /// HoVer-style instances lose their pixels inside the border band.
    pub border: bool,
    /// Stage-4 outputs under-segment the necrosis region.
    pub necrosis: bool,
    /// Instance classes are wrong and class maps carry minority pixel noise.
    pub noise: bool,
    /// SegFormer and the ext11 map miss blood vessels; the U-Net finds them.
    pub vessel: bool,
    /// Primary frames look metastatic by pixel count but show epidermis.
    pub routing: bool,
}

impl Defects {
    pub const NAMES: [&'static str; 5] = ["border", "necrosis", "noise", "vessel", "routing"];

    pub fn all() -> Self {
        Defects {
            border: true,
            necrosis: true,
            noise: true,
            vessel: true,
            routing: true,
        }
    }
}

impl std::str::FromStr for Defects {
    type Err = Error;

    /// Comma-separated names; empty or `none` means no defects.
    fn from_str(s: &str) -> Result<Self> {
        let mut d = Defects::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty() && *n != "none") {
            match name {
                "border" => d.border = true,
                "necrosis" => d.necrosis = true,
                "noise" => d.noise = true,
                "vessel" => d.vessel = true,
                "routing" => d.routing = true,
                "all" => d = Defects::all(),
                other => {
                    return Err(Error::Usage(format!(
                        "unknown defect `{other}` (expected one of {})",
                        Defects::NAMES.join(", ")
                    )))
                }
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    pub size: usize,
    /// Nuclei attempted per frame; fewer are placed if the canvas fills up.
    pub nuclei: usize,
    /// Selects the nuclei scheme (1: 3 classes, 2: 10 classes) and rescue.
    pub track: u8,
    pub defects: Defects,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            frames: 4,
            size: 128,
            nuclei: 16,
            track: 2,
            defects: Defects::default(),
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::Usage(format!("size must be at least 32, got {}", self.size)));
        }
        if self.size > u16::MAX as usize {
            return Err(Error::Usage(format!("size {} is too large", self.size)));
        }
        if self.frames == 0 {
            return Err(Error::Usage("frames must be at least 1".into()));
        }
        if self.nuclei > 1000 {
            return Err(Error::Usage("at most 1000 nuclei per frame".into()));
        }
        if self.track != 1 && self.track != 2 {
            return Err(Error::Usage(format!("track must be 1 or 2, got {}", self.track)));
        }
        Ok(())
    }

    /// Border band width used by generated configs; always valid for the canvas.
    pub fn border_margin(&self) -> usize {
        16.min(self.size / 4)
    }
}

/// Ground truth of one synthetic frame.
struct Truth {
    frame_type: FrameType,
    tissue: Vec<u16>,
    necrosis_center_col: f64,
    nuclei_ids: Vec<u32>,
    nuclei_classes: BTreeMap<u32, u16>,
    nuclei_centers: BTreeMap<u32, usize>,
}

fn paint_ellipse(buf: &mut [u16], s: usize, (cy, cx): (f64, f64), (ry, rx): (f64, f64), value: u16) {
    for r in 0..s {
        for c in 0..s {
            let (dy, dx) = ((r as f64 - cy) / ry, (c as f64 - cx) / rx);
            if dy * dy + dx * dx <= 1.0 {
                buf[r * s + c] = value;
            }
        }
    }
}

fn span(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> f64 {
    rng.random_range(lo..hi.max(lo + 1)) as f64
}

fn generate(rng: &mut ChaCha8Rng, spec: &SynthSpec, index: usize, nuclei_classes: u16) -> Truth {
    let s = spec.size;
    let frame_type = if index.is_multiple_of(2) {
        FrameType::Primary
    } else {
        FrameType::Metastatic
    };
    let mut tissue = vec![STROMA; s * s];

    let bg_width = rng.random_range(s / 10..=s / 6);
    for r in 0..s {
        for c in s - bg_width..s {
            tissue[r * s + c] = BACKGROUND;
        }
    }
    if frame_type == FrameType::Primary {
        tissue[..(s / 10).max(3) * s].fill(EPIDERMIS);
    }
    let center = |rng: &mut ChaCha8Rng| (span(rng, s / 4, 3 * s / 4), span(rng, s / 4, 3 * s / 4));
    let t_center = center(rng);
    let t_radii = (span(rng, s / 6, s / 4), span(rng, s / 6, s / 4));
    paint_ellipse(&mut tissue, s, t_center, t_radii, TUMOR);
    let v_center = (span(rng, s / 8, 7 * s / 8), span(rng, s / 8, 7 * s / 8));
    let v_radii = (span(rng, (s / 16).max(2), s / 10), span(rng, (s / 16).max(2), s / 10));
    paint_ellipse(&mut tissue, s, v_center, v_radii, VESSEL);
    // Painted last so the necrosis region is a single convex blob.
    let n_center = center(rng);
    let n_radii = (span(rng, s / 10, s / 6), span(rng, s / 10, s / 6));
    paint_ellipse(&mut tissue, s, n_center, n_radii, NECROSIS);

    let margin = spec.border_margin();
    let mut placed: Vec<(i64, i64, i64)> = Vec::new();
    let mut nuclei_ids = vec![0u32; s * s];
    let mut classes = BTreeMap::new();
    let mut centers = BTreeMap::new();
    for attempt in 0..spec.nuclei * 50 {
        if placed.len() == spec.nuclei {
            break;
        }
        let radius = rng.random_range(2..=4i64);
        // The first nucleus lies wholly inside the border band so border erasure always bites.
        let row = if attempt == 0 {
            rng.random_range(0..margin - 4)
        } else {
            rng.random_range(0..s)
        } as i64;
        let col = rng.random_range(0..s) as i64;
        let class = rng.random_range(1..nuclei_classes);
        let clear = placed.iter().all(|&(r2, c2, rad2)| {
            let min = radius + rad2 + 3;
            (row - r2).pow(2) + (col - c2).pow(2) >= min * min
        });
        if !clear {
            continue;
        }
        placed.push((row, col, radius));
        let id = placed.len() as u32;
        classes.insert(id, class);
        centers.insert(id, row as usize * s + col as usize);
        for r in (row - radius).max(0)..=(row + radius).min(s as i64 - 1) {
            for c in (col - radius).max(0)..=(col + radius).min(s as i64 - 1) {
                if (r - row).pow(2) + (c - col).pow(2) <= radius * radius {
                    nuclei_ids[r as usize * s + c as usize] = id;
                }
            }
        }
    }

    Truth {
        frame_type,
        tissue,
        necrosis_center_col: n_center.1,
        nuclei_ids,
        nuclei_classes: classes,
        nuclei_centers: centers,
    }
}

/// Scores that are one-hot except at `soft` pixels, where the listed winner
/// gets 0.6 and the runner-up 0.4.
fn scores(scheme: &Arc<ClassScheme>, s: usize, labels: &[u16], soft: &BTreeMap<usize, (u16, u16)>) -> Result<ProbabilityMap> {
    let k = scheme.len();
    let mut data = vec![0.0f32; s * s * k];
    for (i, &l) in labels.iter().enumerate() {
        match soft.get(&i) {
            Some(&(win, lose)) => {
                data[i * k + win as usize] = 0.6;
                data[i * k + lose as usize] = 0.4;
            }
            None => data[i * k + l as usize] = 1.0,
        }
    }
    ProbabilityMap::new(scheme.clone(), s, s, data)
}

fn rgb_of(truth: &Truth, s: usize) -> RgbImage {
    const COLORS: [[u8; 3]; 6] = [
        [240, 240, 240],
        [200, 80, 120],
        [230, 160, 190],
        [180, 110, 160],
        [150, 130, 140],
        [220, 60, 60],
    ];
    let mut data = Vec::with_capacity(s * s * 3);
    for (i, &t) in truth.tissue.iter().enumerate() {
        let px = if truth.nuclei_ids[i] != 0 {
            [70, 40, 110]
        } else {
            COLORS[t as usize]
        };
        data.extend(px.iter().map(|&v| v as f32 / 255.0));
    }
    RgbImage {
        height: s,
        width: s,
        data,
    }
}

struct Writer<'a> {
    root: &'a Path,
    id: String,
}

impl Writer<'_> {
    fn input(&self, file: &str) -> PathBuf {
        PathBuf::from("inputs").join(&self.id).join(file)
    }

    fn pmap(&self, file: &str, map: &ProbabilityMap) -> Result<PathBuf> {
        let rel = self.input(file);
        write_pmap(map, self.root.join(&rel))?;
        Ok(rel)
    }
}

fn write_frame(
    root: &Path,
    registry: &Registry,
    spec: &SynthSpec,
    id: &str,
    truth: &Truth,
    rng: &mut ChaCha8Rng,
) -> Result<FrameBundle> {
    let s = spec.size;
    let d = spec.defects;
    let tissue6 = registry.get(PUMA_TISSUE6)?;
    let ext11 = registry.get(PUMA_EXT11)?;
    let nuclei = registry.get(if spec.track == 1 { NUCLEI_TRACK1 } else { NUCLEI_TRACK2 })?;
    let w = Writer {
        root,
        id: id.to_string(),
    };
    let none = BTreeMap::new();

    let vessel_px: Vec<usize> = (0..s * s).filter(|&i| truth.tissue[i] == VESSEL).collect();
    let soft_vessel: BTreeMap<usize, (u16, u16)> = if d.vessel {
        vessel_px.iter().map(|&i| (i, (STROMA, VESSEL))).collect()
    } else {
        BTreeMap::new()
    };
    // Stage-4 outputs lose the necrosis pixels right of the blob centre.
    let necrosis_hole: Vec<usize> = if d.necrosis {
        (0..s * s)
            .filter(|&i| truth.tissue[i] == NECROSIS && (i % s) as f64 > truth.necrosis_center_col)
            .collect()
    } else {
        Vec::new()
    };
    let mut holed = truth.tissue.clone();
    for &i in &necrosis_hole {
        holed[i] = TUMOR;
    }

    // Extended map: tissue class under the frame's group prefix.
    let mut ext_labels = Vec::with_capacity(s * s);
    for &t in &truth.tissue {
        let t = if d.vessel && t == VESSEL { STROMA } else { t };
        let label = if t == BACKGROUND {
            0
        } else {
            let metastatic = truth.frame_type == FrameType::Metastatic || (d.routing && t != EPIDERMIS);
            let prefix = if metastatic { "metastatic" } else { "primary" };
            ext11.require(&format!("{prefix}_{}", tissue6.name(t).unwrap_or_default()))?
        };
        ext_labels.push(label);
    }
    let ext_rel = w.pmap("ext11.pmap", &scores(&ext11, s, &ext_labels, &none)?)?;

    // The model trained on the other frame type swaps tumor and stroma.
    let swapped = |labels: &[u16]| -> Vec<u16> {
        labels
            .iter()
            .map(|&t| match t {
                TUMOR => STROMA,
                STROMA => TUMOR,
                other => other,
            })
            .collect()
    };
    let mut pairs = BTreeMap::new();
    for ft in [FrameType::Primary, FrameType::Metastatic] {
        let right = ft == truth.frame_type;
        let s2_labels = if right { truth.tissue.clone() } else { swapped(&truth.tissue) };
        let s4_labels = if right { holed.clone() } else { swapped(&truth.tissue) };
        let s2 = w.pmap(&format!("segformer_{ft}_s2.pmap"), &scores(&tissue6, s, &s2_labels, &soft_vessel)?)?;
        let s4 = w.pmap(&format!("segformer_{ft}_s4.pmap"), &scores(&tissue6, s, &s4_labels, &soft_vessel)?)?;
        pairs.insert(
            ft,
            StagePair {
                stage2: Some(s2),
                stage4: Some(s4),
            },
        );
    }
    let unet_rel = w.pmap("unet.pmap", &scores(&tissue6, s, &holed, &none)?)?;

    // Nuclei: semantic class map and HoVer-style instances.
    let mut class_labels: Vec<u16> = truth
        .nuclei_ids
        .iter()
        .map(|&id| if id == 0 { 0 } else { truth.nuclei_classes[&id] })
        .collect();
    let k = nuclei.len() as u16;
    let other_class = |rng: &mut ChaCha8Rng, c: u16| -> u16 {
        let shift = rng.random_range(1..k - 1);
        (c - 1 + shift) % (k - 1) + 1
    };
    let mut inst_classes = truth.nuclei_classes.clone();
    if d.noise {
        for (&id, class) in inst_classes.iter_mut() {
            *class = other_class(rng, *class);
            // Whatever part of a disc keeps its centre after band erasure is at
            // least a quarter disc, so the flipped pixel stays a minority.
            class_labels[truth.nuclei_centers[&id]] = other_class(rng, truth.nuclei_classes[&id]);
        }
    }
    let mut inst_ids = truth.nuclei_ids.clone();
    if d.border {
        let margin = spec.border_margin();
        for (i, v) in inst_ids.iter_mut().enumerate() {
            let (r, c) = (i / s, i % s);
            if r.min(c).min(s - 1 - r).min(s - 1 - c) < margin {
                *v = 0;
            }
        }
        let kept: std::collections::BTreeSet<u32> = inst_ids.iter().copied().filter(|&v| v != 0).collect();
        inst_classes.retain(|id, _| kept.contains(id));
    }
    let classmap = LabelMap::new(nuclei.clone(), s, s, class_labels)?;
    let cm_rel = w.pmap("classmap.pmap", &ProbabilityMap::one_hot(&classmap))?;
    let hover = InstanceMap::new(nuclei.clone(), s, s, inst_ids, inst_classes)?;
    let (hover_png, hover_json) = (w.input("hover.png"), w.input("hover.json"));
    write_instances(&hover, root.join(&hover_png), root.join(&hover_json))?;

    let rgb_rel = w.input("rgb.png");
    write_rgb_png(&rgb_of(truth, s), root.join(&rgb_rel))?;

    let gt_tissue_rel = PathBuf::from("gt/tissue").join(format!("{id}.png"));
    write_label_png(&LabelMap::new(tissue6, s, s, truth.tissue.clone())?, root.join(&gt_tissue_rel))?;
    let gt_inst = InstanceMap::new(nuclei, s, s, truth.nuclei_ids.clone(), truth.nuclei_classes.clone())?;
    let gt_png = PathBuf::from("gt/nuclei").join(format!("{id}.png"));
    let gt_json = PathBuf::from("gt/nuclei").join(format!("{id}.json"));
    write_instances(&gt_inst, root.join(&gt_png), root.join(&gt_json))?;

    Ok(FrameBundle {
        frame_id: id.to_string(),
        rgb: Some(rgb_rel),
        ext11: Some(ext_rel),
        segformer: SegformerSet {
            primary: pairs.remove(&FrameType::Primary).unwrap_or_default(),
            metastatic: pairs.remove(&FrameType::Metastatic).unwrap_or_default(),
        },
        unet: Some(unet_rel),
        instances: Some(hover_png),
        instance_classes: Some(hover_json),
        classmap: Some(cm_rel),
        gt_tissue: Some(gt_tissue_rel),
        gt_instances: Some(gt_png),
        gt_instance_classes: Some(gt_json),
    })
}

/// Writes a synthetic manifest directory under `out_dir`: model outputs in
/// `inputs/`, ground truth in `gt/`, plus `manifest.json` and a full-pipeline
/// `config.json`. Returns the config path. Output depends only on `seed` and `spec`.
pub fn synth_fixtures(seed: u64, spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let root = out_dir.as_ref();
    let registry = Registry::builtin();
    let nuclei_classes = if spec.track == 1 { 4 } else { 11 };
    let mut frames = Vec::with_capacity(spec.frames);
    for index in 0..spec.frames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let truth = generate(&mut rng, spec, index, nuclei_classes);
        let id = format!("frame_{index:03}");
        frames.push(write_frame(root, &registry, spec, &id, &truth, &mut rng)?);
    }
    let manifest = Manifest::new(root, frames)?;
    manifest.write(root.join(MANIFEST_FILE))?;

    let mut config = PipelineConfig::new(MANIFEST_FILE, spec.track);
    config.params.border_margin = spec.border_margin();
    let mut text = config.to_json_pretty()?.into_bytes();
    text.push(b'\n');
    let path = root.join(CONFIG_FILE);
    crate::imgio::write_file(&path, &text)?;
    Ok(path)
}
