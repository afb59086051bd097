//! Tissue ensemble of two segmenters' score maps, and auto-context input
//! composition (RGB plus a context channel).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{self, check_shape, LabelMap, PmapHeader, ProbabilityMap, RgbImage};
use crate::par::{self, Exec};
use crate::schemes::ClassScheme;

/// Which model supplies a channel of the fused map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    SegformerOnly,
    UnetOnly,
    /// `0.5 * (segformer + unet)`
    Mean,
}

/// Per-class source selection, keyed by class name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRuleSet {
    pub background: Source,
    pub classes: BTreeMap<String, Source>,
}

impl Default for FusionRuleSet {
    fn default() -> Self {
        Self::ensemble()
    }
}

impl FusionRuleSet {
    fn tissue(background: Source, rules: [(&str, Source); 5]) -> Self {
        FusionRuleSet {
            background,
            classes: rules.iter().map(|(n, s)| (n.to_string(), *s)).collect(),
        }
    }

    /// Epidermis and necrosis averaged, blood vessel from the U-Net, tumor
    /// and stroma from SegFormer.
    pub fn ensemble() -> Self {
        use Source::*;
        Self::tissue(
            SegformerOnly,
            [
                ("tumor", SegformerOnly),
                ("stroma", SegformerOnly),
                ("epidermis", Mean),
                ("necrosis", Mean),
                ("blood_vessel", UnetOnly),
            ],
        )
    }

    /// Only the blood-vessel channel is replaced by the U-Net.
    pub fn unet_vessel() -> Self {
        use Source::*;
        Self::tissue(
            SegformerOnly,
            [
                ("tumor", SegformerOnly),
                ("stroma", SegformerOnly),
                ("epidermis", SegformerOnly),
                ("necrosis", SegformerOnly),
                ("blood_vessel", UnetOnly),
            ],
        )
    }

    pub fn segformer_only() -> Self {
        use Source::*;
        Self::tissue(
            SegformerOnly,
            [
                ("tumor", SegformerOnly),
                ("stroma", SegformerOnly),
                ("epidermis", SegformerOnly),
                ("necrosis", SegformerOnly),
                ("blood_vessel", SegformerOnly),
            ],
        )
    }

    /// A preset name (`default`, `ensemble`, `unet_vessel`, `segformer_only`)
    /// or a path to a JSON rule file.
    pub fn from_name_or_path(spec: &str) -> Result<Self> {
        match spec {
            "default" | "ensemble" => Ok(Self::ensemble()),
            "unet_vessel" => Ok(Self::unet_vessel()),
            "segformer_only" => Ok(Self::segformer_only()),
            path => {
                let path = Path::new(path);
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
            }
        }
    }

    pub fn uses_unet(&self) -> bool {
        std::iter::once(&self.background)
            .chain(self.classes.values())
            .any(|s| *s != Source::SegformerOnly)
    }

    /// Channel-indexed sources for `scheme`; every foreground class needs exactly one rule.
    pub fn resolve(&self, scheme: &ClassScheme) -> Result<Vec<Source>> {
        let mut out = vec![self.background];
        for c in scheme.foreground() {
            let name = scheme.name(c).unwrap_or_default();
            let src = self.classes.get(name).ok_or_else(|| {
                Error::validation(format!("fusion rules have no entry for class `{name}`"))
            })?;
            out.push(*src);
        }
        if let Some(extra) = self.classes.keys().find(|n| scheme.index_of(n).is_none_or(|i| i == 0)) {
            return Err(Error::validation(format!(
                "fusion rule for `{extra}` is not a foreground class of `{}`",
                scheme.id()
            )));
        }
        Ok(out)
    }
}

/// Combines two score maps channel by channel according to `rules`.
pub fn fuse_tissue(
    segformer: &ProbabilityMap,
    unet: &ProbabilityMap,
    rules: &FusionRuleSet,
) -> Result<ProbabilityMap> {
    fuse_tissue_with(Exec::auto(), segformer, unet, rules)
}

pub fn fuse_tissue_with(
    exec: Exec,
    segformer: &ProbabilityMap,
    unet: &ProbabilityMap,
    rules: &FusionRuleSet,
) -> Result<ProbabilityMap> {
    if segformer.scheme().id() != unet.scheme().id() {
        return Err(Error::validation(format!(
            "fusion inputs use schemes `{}` and `{}`",
            segformer.scheme().id(),
            unet.scheme().id()
        )));
    }
    check_shape("fusion", segformer, unet)?;
    let sources = rules.resolve(segformer.scheme())?;
    let c = sources.len();
    let row_len = segformer.width() * c;
    let (a, b) = (segformer.data(), unet.data());
    let mut out = vec![0.0f32; a.len()];
    par::for_each_chunk_mut(exec, &mut out, row_len, |row, dst| {
        let base = row * row_len;
        for (i, v) in dst.iter_mut().enumerate() {
            let (s, u) = (a[base + i], b[base + i]);
            *v = match sources[i % c] {
                Source::SegformerOnly => s,
                Source::UnetOnly => u,
                Source::Mean => 0.5 * (s + u),
            };
        }
    });
    ProbabilityMap::new(segformer.scheme().clone(), segformer.height(), segformer.width(), out)
}

/// Argmax over fused scores.
pub fn tissue_label(fused: &ProbabilityMap) -> LabelMap {
    imgio::argmax(fused)
}

/// Four-channel network input: RGB followed by `label / (K - 1)` of the context map.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoContextInput {
    pub height: usize,
    pub width: usize,
    pub context_scheme: String,
    /// Row-major, channel-fastest, 4 channels.
    pub data: Vec<f32>,
}

impl AutoContextInput {
    pub fn context_channel(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.chunks_exact(4).map(|px| px[3])
    }

    fn header(&self) -> PmapHeader {
        PmapHeader {
            height: self.height,
            width: self.width,
            channels: 4,
            dtype: "f32le".into(),
            scheme: format!("autocontext:{}", self.context_scheme),
        }
    }

    /// Writes the tensor in the PMAP container with scheme `autocontext:<context scheme>`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = imgio::encode_container(&self.header(), &self.data)?;
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, data) = imgio::decode_container(&bytes)?;
        let context_scheme = h
            .scheme
            .strip_prefix("autocontext:")
            .ok_or_else(|| Error::Format(format!("{}: not an auto-context tensor", path.display())))?
            .to_string();
        if h.channels != 4 {
            return Err(Error::Format(format!("{}: expected 4 channels", path.display())));
        }
        Ok(AutoContextInput {
            height: h.height,
            width: h.width,
            context_scheme,
            data,
        })
    }
}

pub fn compose_autocontext(rgb: &RgbImage, context: &LabelMap) -> Result<AutoContextInput> {
    if rgb.data.len() != rgb.height * rgb.width * 3 {
        return Err(Error::validation("RGB buffer does not match its dimensions"));
    }
    check_shape("auto-context", rgb, context)?;
    if let Some(v) = rgb.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::validation(format!("RGB value {v} outside [0, 1]")));
    }
    let denom = context.scheme().len().saturating_sub(1).max(1) as f32;
    let mut data = Vec::with_capacity(rgb.height * rgb.width * 4);
    for (px, &label) in rgb.data.chunks_exact(3).zip(context.data()) {
        data.extend_from_slice(px);
        data.push(label as f32 / denom);
    }
    Ok(AutoContextInput {
        height: rgb.height,
        width: rgb.width,
        context_scheme: context.scheme().id().to_string(),
        data,
    })
}
