use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framecls::FrameType;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage4: Option<PathBuf>,
}

/// SegFormer outputs of the primary-trained and metastatic-trained models.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegformerSet {
    #[serde(default)]
    pub primary: StagePair,
    #[serde(default)]
    pub metastatic: StagePair,
}

impl SegformerSet {
    pub fn for_type(&self, ft: FrameType) -> &StagePair {
        match ft {
            FrameType::Primary => &self.primary,
            FrameType::Metastatic => &self.metastatic,
        }
    }
}

/// Precomputed model outputs for one frame. Paths are relative to the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameBundle {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ext11: Option<PathBuf>,
    #[serde(default)]
    pub segformer: SegformerSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unet: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_classes: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classmap: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tissue: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_instances: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_instance_classes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    /// Sorted by frame id.
    pub frames: Vec<FrameBundle>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let frames: Vec<FrameBundle> = serde_json::from_slice(&text)
            .map_err(|e| Error::config("manifest", format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, frames)
    }

    pub fn new(root: impl Into<PathBuf>, mut frames: Vec<FrameBundle>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::config("manifest", "no frames listed"));
        }
        let mut seen = BTreeSet::new();
        for f in &frames {
            check_frame_id(&f.frame_id)?;
            if !seen.insert(f.frame_id.as_str()) {
                return Err(Error::config("manifest", format!("duplicate frame id `{}`", f.frame_id)));
            }
        }
        frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        Ok(Manifest {
            root: root.into(),
            frames,
        })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_vec_pretty(&self.frames).map_err(|e| Error::json("manifest", e))?;
        text.push(b'\n');
        crate::imgio::write_file(path, &text)
    }
}

/// Frame ids become file names, so they are restricted to a safe alphabet.
fn check_frame_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::config("manifest", format!("frame id `{id}` is not a safe file name")))
    }
}
