//! Probability maps, label maps and instance maps, and their on-disk formats.
//!
//! * PMAP: `PMAPV001`, u32 LE header length, JSON header, then f32 LE
//!   payload in row-major, channel-fastest order.
//! * Label maps: 16-bit grayscale PNG, pixel value = class index.
//! * Instance maps: 16-bit grayscale PNG of ids plus a JSON sidecar
//!   `{"scheme":..,"classes":{"<id>":<class>}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::schemes::{ClassScheme, Registry};

pub const PMAP_MAGIC: &[u8; 8] = b"PMAPV001";
const DTYPE_F32LE: &str = "f32le";

/// Per-pixel class scores in `[0, 1]`, `channels` = scheme class count.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    scheme: Arc<ClassScheme>,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(scheme: Arc<ClassScheme>, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let channels = scheme.len();
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::validation("probability map dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::validation(format!(
                "probability map {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::validation(format!(
                "probability value {} at offset {pos} is outside [0, 1]",
                data[pos]
            )));
        }
        Ok(ProbabilityMap {
            scheme,
            height,
            width,
            data,
        })
    }

    /// Scores of 1.0 on each pixel's label and 0.0 elsewhere.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let c = labels.scheme.len();
        let mut data = vec![0.0f32; labels.data.len() * c];
        for (i, &l) in labels.data.iter().enumerate() {
            data[i * c + l as usize] = 1.0;
        }
        ProbabilityMap {
            scheme: labels.scheme.clone(),
            height: labels.height,
            width: labels.width,
            data,
        }
    }

    pub fn scheme(&self) -> &Arc<ClassScheme> {
        &self.scheme
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.scheme.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let c = self.channels();
        let off = (row * self.width + col) * c;
        &self.data[off..off + c]
    }
}

/// Per-pixel class index under a scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    scheme: Arc<ClassScheme>,
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(scheme: Arc<ClassScheme>, height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        let k = scheme.len();
        if let Some(pos) = data.iter().position(|&v| v as usize >= k) {
            return Err(Error::validation(format!(
                "label {} at pixel {pos} is not a class of `{}` ({k} classes)",
                data[pos],
                scheme.id()
            )));
        }
        Ok(LabelMap {
            scheme,
            height,
            width,
            data,
        })
    }

    pub fn background(scheme: Arc<ClassScheme>, height: usize, width: usize) -> Self {
        LabelMap {
            scheme,
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn scheme(&self) -> &Arc<ClassScheme> {
        &self.scheme
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// Pixel count per class index.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.scheme.len()];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    pub fn same_shape<T: Shape>(&self, other: &T) -> bool {
        self.height == other.dims().0 && self.width == other.dims().1
    }
}

/// Instance ids (0 = background) with a class per instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    scheme: Arc<ClassScheme>,
    height: usize,
    width: usize,
    ids: Vec<u32>,
    classes: BTreeMap<u32, u16>,
}

impl InstanceMap {
    pub fn new(
        scheme: Arc<ClassScheme>,
        height: usize,
        width: usize,
        ids: Vec<u32>,
        classes: BTreeMap<u32, u16>,
    ) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::validation(format!(
                "instance map {height}x{width} needs {} ids, got {}",
                height * width,
                ids.len()
            )));
        }
        if classes.contains_key(&0) {
            return Err(Error::Consistency("class table has an entry for id 0".into()));
        }
        let k = scheme.len();
        if let Some((id, c)) = classes.iter().find(|(_, &c)| c == 0 || c as usize >= k) {
            return Err(Error::validation(format!(
                "instance {id} has class {c}, not a foreground class of `{}`",
                scheme.id()
            )));
        }
        let present: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != 0).collect();
        if let Some(missing) = present.iter().find(|id| !classes.contains_key(id)) {
            return Err(Error::Consistency(format!("instance {missing} has no class entry")));
        }
        if let Some(extra) = classes.keys().find(|id| !present.contains(id)) {
            return Err(Error::Consistency(format!(
                "class entry for instance {extra} which has no pixels"
            )));
        }
        Ok(InstanceMap {
            scheme,
            height,
            width,
            ids,
            classes,
        })
    }

    pub fn empty(scheme: Arc<ClassScheme>, height: usize, width: usize) -> Self {
        InstanceMap {
            scheme,
            height,
            width,
            ids: vec![0; height * width],
            classes: BTreeMap::new(),
        }
    }

    pub fn scheme(&self) -> &Arc<ClassScheme> {
        &self.scheme
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn classes(&self) -> &BTreeMap<u32, u16> {
        &self.classes
    }

    pub fn class_of(&self, id: u32) -> Option<u16> {
        self.classes.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Semantic view: each pixel gets its instance's class, background elsewhere.
    pub fn class_map(&self) -> LabelMap {
        let data = self
            .ids
            .iter()
            .map(|&id| if id == 0 { 0 } else { self.classes[&id] })
            .collect();
        LabelMap {
            scheme: self.scheme.clone(),
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Anything with a `(height, width)` raster.
pub trait Shape {
    fn dims(&self) -> (usize, usize);
}

impl Shape for ProbabilityMap {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shape for LabelMap {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shape for InstanceMap {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub(crate) fn check_shape(what: &str, a: &impl Shape, b: &impl Shape) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "{what}: shape {:?} does not match {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Per pixel, the smallest channel index attaining the maximum score.
pub fn argmax(map: &ProbabilityMap) -> LabelMap {
    argmax_with(Exec::auto(), map)
}

pub fn argmax_with(exec: Exec, map: &ProbabilityMap) -> LabelMap {
    let c = map.channels();
    let w = map.width;
    let mut data = vec![0u16; map.height * w];
    par::for_each_chunk_mut(exec, &mut data, w, |row, out| {
        let src = &map.data[row * w * c..(row + 1) * w * c];
        for (px, dst) in src.chunks_exact(c).zip(out.iter_mut()) {
            let mut best = 0usize;
            for (i, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = i;
                }
            }
            *dst = best as u16;
        }
    });
    LabelMap {
        scheme: map.scheme.clone(),
        height: map.height,
        width: map.width,
        data,
    }
}

// ---------------------------------------------------------------------------
// PMAP container
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmapHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: String,
    pub scheme: String,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes a raw container without scheme validation.
pub fn encode_container(header: &PmapHeader, values: &[f32]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::json("pmap header", e))?;
    let mut out = Vec::with_capacity(12 + json.len() + values.len() * 4);
    out.extend_from_slice(PMAP_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a raw container: checks magic, header and payload size only.
pub fn decode_container(bytes: &[u8]) -> Result<(PmapHeader, Vec<f32>)> {
    if bytes.len() < 8 || &bytes[..8] != PMAP_MAGIC {
        return Err(Error::Format("missing PMAPV001 magic".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Corruption("truncated before header length".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::Corruption(format!(
            "header length {hlen} exceeds file size"
        )));
    }
    let header: PmapHeader = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Corruption(format!("unreadable header: {e}")))?;
    if header.dtype != DTYPE_F32LE {
        return Err(Error::Format(format!("unsupported dtype `{}`", header.dtype)));
    }
    let payload = &body[hlen..];
    let expected = header
        .height
        .checked_mul(header.width)
        .and_then(|n| n.checked_mul(header.channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corruption("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "header declares {}x{}x{} ({expected} bytes) but payload has {} bytes",
            header.height,
            header.width,
            header.channels,
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn encode_pmap(map: &ProbabilityMap) -> Result<Vec<u8>> {
    let header = PmapHeader {
        height: map.height,
        width: map.width,
        channels: map.channels(),
        dtype: DTYPE_F32LE.into(),
        scheme: map.scheme.id().into(),
    };
    encode_container(&header, &map.data)
}

pub fn decode_pmap(bytes: &[u8], registry: &Registry) -> Result<ProbabilityMap> {
    let (header, values) = decode_container(bytes)?;
    let scheme = registry.get(&header.scheme)?;
    if scheme.len() != header.channels {
        return Err(Error::validation(format!(
            "pmap has {} channels but scheme `{}` has {} classes",
            header.channels,
            scheme.id(),
            scheme.len()
        )));
    }
    ProbabilityMap::new(scheme, header.height, header.width, values)
}

pub fn read_pmap(path: impl AsRef<Path>, registry: &Registry) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    decode_pmap(&read_file(path)?, registry).map_err(|e| annotate(e, path))
}

/// Writes `map`. The map is validated before anything touches the disk.
pub fn write_pmap(map: &ProbabilityMap, path: impl AsRef<Path>) -> Result<()> {
    // maps built through `ProbabilityMap::new` are valid; re-check anyway since
    // `one_hot` and the kernels construct them directly
    let checked = ProbabilityMap::new(map.scheme.clone(), map.height, map.width, map.data.clone())?;
    write_file(path.as_ref(), &encode_pmap(&checked)?)
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        Error::Consistency(m) => Error::Consistency(format!("{}: {m}", path.display())),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

fn decode_gray16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("not a PNG: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "expected 16-bit grayscale PNG, got {color:?} {depth:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Corruption(format!("PNG data: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let values = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect::<Vec<_>>();
    if values.len() != w * h {
        return Err(Error::Corruption("PNG row layout mismatch".into()));
    }
    Ok((h, w, values))
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
    }
    Ok(out)
}

fn encode_gray16(width: usize, height: usize, values: impl Iterator<Item = u16>) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = values.flat_map(u16::to_be_bytes).collect();
    encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn read_label_png(path: impl AsRef<Path>, scheme: Arc<ClassScheme>) -> Result<LabelMap> {
    let path = path.as_ref();
    let (h, w, data) = decode_gray16(&read_file(path)?).map_err(|e| annotate(e, path))?;
    LabelMap::new(scheme, h, w, data).map_err(|e| annotate(e, path))
}

pub fn write_label_png(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_gray16(map.width, map.height, map.data.iter().copied())?;
    write_file(path.as_ref(), &bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    scheme: String,
    classes: BTreeMap<String, u16>,
}

pub fn read_instances(
    png_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
    registry: &Registry,
) -> Result<InstanceMap> {
    let (png_path, json_path) = (png_path.as_ref(), json_path.as_ref());
    let text = std::fs::read(json_path).map_err(|e| Error::io(json_path, e))?;
    let sidecar: Sidecar =
        serde_json::from_slice(&text).map_err(|e| Error::json(json_path.display().to_string(), e))?;
    let scheme = registry.get(&sidecar.scheme)?;
    let mut classes = BTreeMap::new();
    for (k, v) in sidecar.classes {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::Format(format!("{}: instance key `{k}` is not an integer", json_path.display())))?;
        classes.insert(id, v);
    }
    let (h, w, ids) = decode_gray16(&read_file(png_path)?).map_err(|e| annotate(e, png_path))?;
    let ids = ids.into_iter().map(u32::from).collect();
    InstanceMap::new(scheme, h, w, ids, classes).map_err(|e| annotate(e, png_path))
}

pub fn write_instances(
    inst: &InstanceMap,
    png_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<()> {
    if let Some(&max) = inst.classes.keys().next_back() {
        if max > u16::MAX as u32 {
            return Err(Error::validation(format!(
                "instance id {max} does not fit a 16-bit PNG"
            )));
        }
    }
    let bytes = encode_gray16(inst.width, inst.height, inst.ids.iter().map(|&i| i as u16))?;
    let sidecar = Sidecar {
        scheme: inst.scheme.id().into(),
        classes: inst.classes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    };
    let json = serde_json::to_vec(&sidecar).map_err(|e| Error::json("instance sidecar", e))?;
    write_file(png_path.as_ref(), &bytes)?;
    write_file(json_path.as_ref(), &json)
}

/// 8-bit RGB image with values scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Shape for RgbImage {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut decoder = png::Decoder::new(Cursor::new(&bytes[..]));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: not a PNG: {e}", path.display())))?;
    let (color, depth) = (reader.info().color_type, reader.info().bit_depth);
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit RGB PNG, got {color:?} {depth:?}",
            path.display()
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
    Ok(RgbImage {
        height: frame.height as usize,
        width: frame.width as usize,
        data: buf[..frame.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

pub fn write_rgb_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let png = encode_png(img.width, img.height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)?;
    write_file(path.as_ref(), &png)
}
