use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::framecls::{ClassifierParams, FrameType};
use crate::fusion::FusionRuleSet;
use crate::nucfuse::FallbackPolicy;
use crate::panmetrics::{DEFAULT_IOU_THRESHOLD, DEFAULT_RADIUS};

/// Stage switches. Everything on reproduces the full method; everything off
/// reads the stage-1 map straight through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub classifier: bool,
    pub classification_rules: bool,
    pub unet_branch: bool,
    pub stage4: bool,
    pub tissue_ensemble_rules: bool,
    pub post_processing: bool,
}

impl Toggles {
    pub fn all(on: bool) -> Self {
        Toggles {
            classifier: on,
            classification_rules: on,
            unet_branch: on,
            stage4: on,
            tissue_ensemble_rules: on,
            post_processing: on,
        }
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::all(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub epidermis_min_pixels: u64,
    pub border_margin: usize,
    pub rescue_enabled: bool,
    pub rescue_class: String,
    pub fallback_policy: FallbackPolicy,
    pub radius: f64,
    pub iou_threshold: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            epidermis_min_pixels: 1,
            border_margin: 16,
            rescue_enabled: true,
            rescue_class: "necrosis".into(),
            fallback_policy: FallbackPolicy::default(),
            radius: DEFAULT_RADIUS,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Manifest path; relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default)]
    pub params: PipelineParams,
    #[serde(default)]
    pub frame_type_override: Option<FrameType>,
    pub track: u8,
    /// Write the 4-channel stage-3/stage-4 network inputs next to the stage artifacts.
    #[serde(default = "default_true")]
    pub export_autocontext: bool,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, track: u8) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            toggles: Toggles::default(),
            params: PipelineParams::default(),
            frame_type_override: None,
            track,
            export_autocontext: true,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    /// Directory that relative manifest paths are resolved against.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.base_dir.join(&self.manifest)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("pipeline config", e))
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self).map_err(|e| Error::json("pipeline config", e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn rescue_active(&self) -> bool {
        self.toggles.post_processing && self.params.rescue_enabled && self.track == 2
    }

    /// Whether the frame type is known, so the stage-2/4 model pair can be routed.
    pub fn routes_frames(&self) -> bool {
        self.frame_type_override.is_some() || self.toggles.classifier
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            epidermis_min_pixels: self.params.epidermis_min_pixels,
            epidermis_rule: self.toggles.classification_rules,
        }
    }

    /// Fusion rules implied by the U-Net and ensemble toggles; `None` means SegFormer only.
    pub fn fusion_rules(&self) -> Option<FusionRuleSet> {
        match (self.toggles.unet_branch, self.toggles.tissue_ensemble_rules) {
            (false, _) => None,
            (true, false) => Some(FusionRuleSet::unet_vessel()),
            (true, true) => Some(FusionRuleSet::ensemble()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.toggles;
        if self.track != 1 && self.track != 2 {
            return Err(Error::config("config", format!("track must be 1 or 2, got {}", self.track)));
        }
        if t.tissue_ensemble_rules && !t.unet_branch {
            return Err(Error::config(
                "stage2",
                "tissue_ensemble_rules needs unet_branch enabled",
            ));
        }
        if t.stage4 && !self.routes_frames() {
            return Err(Error::config(
                "stage4",
                "stage4 needs the classifier or a frame_type_override to pick a model",
            ));
        }
        if self.rescue_active() && !t.stage4 {
            return Err(Error::config("post_processing", "necrosis rescue needs stage4 enabled"));
        }
        if self.params.rescue_class.is_empty() {
            return Err(Error::config("post_processing", "rescue_class is empty"));
        }
        if !(self.params.radius.is_finite() && self.params.radius >= 0.0) {
            return Err(Error::config("metrics", "radius must be a finite non-negative number"));
        }
        if !(0.5..1.0).contains(&self.params.iou_threshold) {
            return Err(Error::config("metrics", "iou_threshold must lie in [0.5, 1)"));
        }
        Ok(())
    }
}
