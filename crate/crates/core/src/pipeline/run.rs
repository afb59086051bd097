use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{FrameBundle, Manifest};
use crate::error::{Error, Result};
use crate::framecls::{classify_frame, FrameType};
use crate::fusion::{compose_autocontext, fuse_tissue_with, FusionRuleSet};
use crate::imgio::{
    argmax_with, check_shape, read_instances, read_label_png, read_pmap, read_rgb_png, write_instances,
    write_label_png, InstanceMap, LabelMap, ProbabilityMap, RgbImage, Shape,
};
use crate::nucfuse::{border_correct, majority_vote_classify_with, BorderParams, VoteParams};
use crate::panmetrics::{
    detection_f1_with, mean_track_score, micro_dice_with, micro_pq_with, panoptic_quality_with,
    MetricReport,
};
use crate::par::{self, Exec};
use crate::rescue::{necrosis_rescue, RescueParams};
use crate::schemes::{remap_labels, ClassScheme, Registry, RemapOutcome, RemapTable};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    /// `None` when the classifier is off and no override is set.
    pub frame_type: Option<FrameType>,
    pub instances: usize,
    /// Artifact name to path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tissue_frames: usize,
    pub nuclei_frames: usize,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub frames: Vec<FrameRecord>,
    pub metrics: RunMetrics,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("run report", e))
    }
}

/// Runs every frame of the config's manifest with up to `jobs` worker threads
/// and writes outputs plus `report.json` under `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: impl AsRef<Path>, jobs: usize) -> Result<RunReport> {
    let registry = Registry::builtin();
    let out_dir = out_dir.as_ref();
    par::with_jobs(jobs, |exec| run_pipeline_with(exec, config, &registry, out_dir))
}

pub fn run_pipeline_with(
    exec: Exec,
    config: &PipelineConfig,
    registry: &Registry,
    out_dir: &Path,
) -> Result<RunReport> {
    config.validate()?;
    let manifest = Manifest::load(config.manifest_path())?;
    let ctx = FrameCtx {
        cfg: config,
        manifest: &manifest,
        registry,
        out: out_dir,
        exec,
        project: RemapTable::ext11_to_tissue6(registry)?,
        rules: config.fusion_rules(),
    };
    let outputs = par::map_collect(exec, &manifest.frames, |b| ctx.run(b));
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let metrics = score(exec, config, &outputs)?;
    let report = RunReport {
        config_hash: config.hash()?,
        frames: outputs.into_iter().map(|o| o.record).collect(),
        metrics,
    };
    let mut text = report.to_json_pretty()?.into_bytes();
    text.push(b'\n');
    crate::imgio::write_file(&out_dir.join(REPORT_FILE), &text)?;
    Ok(report)
}

struct FrameOutput {
    record: FrameRecord,
    tissue: LabelMap,
    nuclei: InstanceMap,
    gt_tissue: Option<LabelMap>,
    gt_nuclei: Option<InstanceMap>,
}

struct FrameCtx<'a> {
    cfg: &'a PipelineConfig,
    manifest: &'a Manifest,
    registry: &'a Registry,
    out: &'a Path,
    exec: Exec,
    project: RemapTable,
    rules: Option<FusionRuleSet>,
}

/// Per-frame state: resolves inputs, checks shapes and records artifacts.
struct Frame<'a> {
    ctx: &'a FrameCtx<'a>,
    bundle: &'a FrameBundle,
    dims: Option<(usize, usize)>,
    artifacts: BTreeMap<String, String>,
}

impl Frame<'_> {
    fn id(&self) -> &str {
        &self.bundle.frame_id
    }

    fn input(&self, path: &Option<PathBuf>, stage: &str, what: &str) -> Result<PathBuf> {
        let rel = path.as_ref().ok_or_else(|| {
            Error::config(stage, format!("frame `{}` has no {what}", self.id()))
        })?;
        let full = self.ctx.manifest.resolve(rel);
        if !full.is_file() {
            return Err(Error::config(
                stage,
                format!("frame `{}`: {what} `{}` does not exist", self.id(), full.display()),
            ));
        }
        Ok(full)
    }

    fn shaped<T: Shape>(&mut self, what: &str, value: T) -> Result<T> {
        let dims = value.dims();
        match self.dims {
            None => self.dims = Some(dims),
            Some(expected) if expected != dims => {
                return Err(Error::validation(format!(
                    "frame `{}`: {what} is {}x{} but earlier inputs are {}x{}",
                    self.id(),
                    dims.0,
                    dims.1,
                    expected.0,
                    expected.1
                )))
            }
            Some(_) => {}
        }
        Ok(value)
    }

    fn pmap(&mut self, path: &Option<PathBuf>, stage: &str, what: &str) -> Result<ProbabilityMap> {
        let full = self.input(path, stage, what)?;
        let map = read_pmap(full, self.ctx.registry)?;
        self.shaped(what, map)
    }

    fn rgb(&mut self, stage: &str) -> Result<RgbImage> {
        let bundle = self.bundle;
        let full = self.input(&bundle.rgb, stage, "RGB image")?;
        let img = read_rgb_png(full)?;
        self.shaped("RGB image", img)
    }

    fn rel(&self, kind: &str, file: &str) -> String {
        match kind {
            "stages" => format!("stages/{}/{file}", self.id()),
            _ => format!("{kind}/{file}"),
        }
    }

    fn save_labels(&mut self, name: &str, rel: String, map: &LabelMap) -> Result<()> {
        write_label_png(map, self.ctx.out.join(&rel))?;
        self.artifacts.insert(name.into(), rel);
        Ok(())
    }

    fn save_instances(&mut self, name: &str, rel_stem: String, inst: &InstanceMap) -> Result<()> {
        let (png, json) = (format!("{rel_stem}.png"), format!("{rel_stem}.json"));
        write_instances(inst, self.ctx.out.join(&png), self.ctx.out.join(&json))?;
        self.artifacts.insert(name.into(), png);
        self.artifacts.insert(format!("{name}_classes"), json);
        Ok(())
    }

    fn save_context(&mut self, name: &str, rgb: &RgbImage, context: &LabelMap) -> Result<()> {
        let rel = self.rel("stages", &format!("{name}.pmap"));
        compose_autocontext(rgb, context)?.write(self.ctx.out.join(&rel))?;
        self.artifacts.insert(name.into(), rel);
        Ok(())
    }

    /// Stage-2/4 tissue map from the routed SegFormer output, fused with the U-Net if enabled.
    fn tissue(&mut self, seg_path: &Option<PathBuf>, stage: &str) -> Result<LabelMap> {
        let seg = self.pmap(seg_path, stage, &format!("{stage} SegFormer output"))?;
        let scores = match &self.ctx.rules {
            Some(rules) => {
                let bundle = self.bundle;
                let unet = self.pmap(&bundle.unet, stage, "U-Net output")?;
                fuse_tissue_with(self.ctx.exec, &seg, &unet, rules)?
            }
            None => seg,
        };
        Ok(argmax_with(self.ctx.exec, &scores))
    }
}

impl FrameCtx<'_> {
    fn run(&self, bundle: &FrameBundle) -> Result<FrameOutput> {
        let mut fr = Frame {
            ctx: self,
            bundle,
            dims: None,
            artifacts: BTreeMap::new(),
        };
        let cfg = self.cfg;
        let t = &cfg.toggles;
        let id = bundle.frame_id.clone();

        // Stage 1: extended tissue map, frame type and its 6-class projection.
        let needs_ext = (t.classifier && cfg.frame_type_override.is_none())
            || !cfg.routes_frames()
            || cfg.rescue_active();
        let mut stage1 = None;
        let mut frame_type = cfg.frame_type_override;
        if needs_ext {
            let ext = fr.pmap(&bundle.ext11, "stage1", "ext11 map")?;
            let ext_labels = argmax_with(self.exec, &ext);
            if frame_type.is_none() && t.classifier {
                frame_type = Some(classify_frame(&ext_labels, &cfg.classifier_params())?);
            }
            let projected = match remap_labels(&ext_labels, &self.project)? {
                RemapOutcome::Mapped(m) => m,
                RemapOutcome::Rejected(why) => {
                    return Err(Error::validation(format!("frame `{id}`: stage-1 projection rejected: {why}")))
                }
            };
            fr.save_labels("stage1_tissue", fr.rel("stages", "stage1_tissue.png"), &projected)?;
            stage1 = Some(projected);
        }

        // Stage 2: routed tissue ensemble, or the stage-1 projection when unrouted.
        let stage2 = match frame_type {
            Some(ft) => fr.tissue(&bundle.segformer.for_type(ft).stage2, "stage2")?,
            None => stage1.clone().ok_or_else(|| Error::config("stage1", "no stage-1 map"))?,
        };
        fr.save_labels("stage2_tissue", fr.rel("stages", "stage2_tissue.png"), &stage2)?;

        // Stage 3: nuclei classes by vote, then border correction.
        let rgb = if cfg.export_autocontext {
            Some(fr.rgb("stage3")?)
        } else {
            None
        };
        if let Some(rgb) = &rgb {
            fr.save_context("stage3_input", rgb, &stage2)?;
        }
        let inst_png = fr.input(&bundle.instances, "stage3", "instance map")?;
        let inst_json = fr.input(&bundle.instance_classes, "stage3", "instance classes")?;
        let instances = fr.shaped("instance map", read_instances(inst_png, inst_json, self.registry)?)?;
        let classmap = fr.pmap(&bundle.classmap, "stage3", "nuclei class map")?;
        let classmap = argmax_with(self.exec, &classmap);
        let vote = VoteParams {
            fallback_policy: cfg.params.fallback_policy,
        };
        let voted = majority_vote_classify_with(self.exec, &instances, &classmap, &vote)
            .map_err(|e| in_frame(&id, e))?;
        let nuclei = if t.post_processing {
            fr.save_instances("stage3_vote", fr.rel("stages", "stage3_vote"), &voted)?;
            let border = BorderParams {
                margin: cfg.params.border_margin,
            };
            border_correct(&voted, &classmap, &border).map_err(|e| in_frame(&id, e))?
        } else {
            voted
        };

        // Stage 4: nuclei-guided refinement, then necrosis rescue.
        let tissue = if t.stage4 {
            let ft = frame_type.ok_or_else(|| Error::config("stage4", "frame type unknown"))?;
            if let Some(rgb) = &rgb {
                fr.save_context("stage4_input", rgb, &nuclei.class_map())?;
            }
            let stage4 = fr.tissue(&bundle.segformer.for_type(ft).stage4, "stage4")?;
            fr.save_labels("stage4_tissue", fr.rel("stages", "stage4_tissue.png"), &stage4)?;
            if cfg.rescue_active() {
                let s1 = stage1
                    .as_ref()
                    .ok_or_else(|| Error::config("post_processing", "no stage-1 map for rescue"))?;
                let params = rescue_params(stage4.scheme(), &cfg.params.rescue_class)?;
                necrosis_rescue(s1, &stage4, &params).map_err(|e| in_frame(&id, e))?
            } else {
                stage4
            }
        } else {
            stage2
        };

        fr.save_labels("tissue", fr.rel("tissue", &format!("{id}.png")), &tissue)?;
        fr.save_instances("nuclei", fr.rel("nuclei", &id), &nuclei)?;

        let gt_tissue = match &bundle.gt_tissue {
            Some(_) => {
                let path = fr.input(&bundle.gt_tissue, "metrics", "ground-truth tissue")?;
                Some(fr.shaped("ground-truth tissue", read_label_png(path, tissue.scheme().clone())?)?)
            }
            None => None,
        };
        let gt_nuclei = match &bundle.gt_instances {
            Some(_) => {
                let png = fr.input(&bundle.gt_instances, "metrics", "ground-truth instances")?;
                let json = fr.input(&bundle.gt_instance_classes, "metrics", "ground-truth instance classes")?;
                Some(fr.shaped("ground-truth instances", read_instances(png, json, self.registry)?)?)
            }
            None => None,
        };

        Ok(FrameOutput {
            record: FrameRecord {
                frame_id: id,
                frame_type,
                instances: nuclei.len(),
                artifacts: fr.artifacts,
            },
            tissue,
            nuclei,
            gt_tissue,
            gt_nuclei,
        })
    }
}

fn rescue_params(scheme: &Arc<ClassScheme>, class: &str) -> Result<RescueParams> {
    let target_class = scheme.index_of(class).ok_or_else(|| {
        Error::config(
            "post_processing",
            format!("rescue class `{class}` is not in scheme `{}`", scheme.id()),
        )
    })?;
    Ok(RescueParams {
        enabled: true,
        target_class,
    })
}

fn in_frame(id: &str, e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("frame `{id}`: {m}")),
        Error::Consistency(m) => Error::Consistency(format!("frame `{id}`: {m}")),
        other => other,
    }
}

/// Scores frames that carry ground truth, aggregated in frame-id order.
fn score(exec: Exec, cfg: &PipelineConfig, outputs: &[FrameOutput]) -> Result<RunMetrics> {
    let tissue: Vec<(LabelMap, LabelMap)> = outputs
        .iter()
        .filter_map(|o| o.gt_tissue.as_ref().map(|g| (o.tissue.clone(), g.clone())))
        .collect();
    let (pred, gt): (Vec<InstanceMap>, Vec<InstanceMap>) = outputs
        .iter()
        .filter_map(|o| o.gt_nuclei.as_ref().map(|g| (o.nuclei.clone(), g.clone())))
        .unzip();
    for (p, g) in &tissue {
        check_shape("tissue scoring", p, g)?;
    }

    let mut m = RunMetrics {
        tissue_frames: tissue.len(),
        nuclei_frames: gt.len(),
        ..Default::default()
    };
    if !tissue.is_empty() {
        m.micro_dice = Some(micro_dice_with(exec, &tissue)?);
    }
    if !gt.is_empty() {
        let (radius, iou) = (cfg.params.radius, cfg.params.iou_threshold);
        m.detection_f1 = Some(detection_f1_with(exec, &pred, &gt, radius)?);
        m.pq = Some(panoptic_quality_with(exec, &pred, &gt, iou)?);
        m.micro_pq = Some(micro_pq_with(exec, &pred, &gt, iou)?);
    }
    if let (Some(d), Some(f)) = (&m.micro_dice, &m.detection_f1) {
        m.mean_track_score = Some(mean_track_score(d.aggregate, f.aggregate)?);
    }
    Ok(m)
}
