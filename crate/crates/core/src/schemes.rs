//! Class schemes and label remapping.
//!
//! Canonical index orders are fixed here; nothing else in the crate hard-codes
//! numeric class ids except through [`ClassScheme::index_of`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::LabelMap;

pub const PUMA_TISSUE6: &str = "puma_tissue6";
pub const PUMA_EXT11: &str = "puma_ext11";
pub const NUCLEI_TRACK1: &str = "nuclei_track1";
pub const NUCLEI_TRACK2: &str = "nuclei_track2";
pub const MONUSAC_NUCLEI: &str = "monusac_nuclei";
pub const PANOPTILS_TISSUE: &str = "panoptils_tissue";
pub const PANOPTILS_NUCLEI: &str = "panoptils_nuclei";

const TISSUE_FOREGROUND: [&str; 5] = ["tumor", "stroma", "epidermis", "necrosis", "blood_vessel"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Background,
    Primary,
    Metastatic,
    Foreground,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub index: u16,
    pub name: String,
    pub group: Group,
}

/// A named, ordered class list. Index 0 is always background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme")]
pub struct ClassScheme {
    scheme_id: String,
    classes: Vec<ClassEntry>,
}

#[derive(Deserialize)]
struct RawScheme {
    scheme_id: String,
    classes: Vec<ClassEntry>,
}

impl TryFrom<RawScheme> for ClassScheme {
    type Error = Error;

    fn try_from(raw: RawScheme) -> Result<Self> {
        ClassScheme::new(raw.scheme_id, raw.classes)
    }
}

impl ClassScheme {
    pub fn new(scheme_id: impl Into<String>, mut classes: Vec<ClassEntry>) -> Result<Self> {
        let scheme_id = scheme_id.into();
        classes.sort_by_key(|c| c.index);
        if classes.is_empty() {
            return Err(Error::validation(format!("scheme `{scheme_id}` has no classes")));
        }
        if classes.len() > u16::MAX as usize {
            return Err(Error::validation(format!("scheme `{scheme_id}` has too many classes")));
        }
        for (pos, c) in classes.iter().enumerate() {
            if c.index as usize != pos {
                return Err(Error::validation(format!(
                    "scheme `{scheme_id}`: class indices must be contiguous from 0 (missing {pos})"
                )));
            }
        }
        if classes[0].group != Group::Background {
            return Err(Error::validation(format!(
                "scheme `{scheme_id}`: index 0 must be tagged background"
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::validation(format!(
                    "scheme `{scheme_id}`: duplicate class name `{}`",
                    c.name
                )));
            }
        }
        Ok(ClassScheme { scheme_id, classes })
    }

    fn from_names(scheme_id: &str, names: &[(&str, Group)]) -> Self {
        let classes = names
            .iter()
            .enumerate()
            .map(|(i, (name, group))| ClassEntry {
                index: i as u16,
                name: (*name).to_string(),
                group: *group,
            })
            .collect();
        ClassScheme::new(scheme_id, classes).expect("builtin scheme is well formed")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn id(&self) -> &str {
        &self.scheme_id
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn name(&self, index: u16) -> Option<&str> {
        self.classes.get(index as usize).map(|c| c.name.as_str())
    }

    pub fn group(&self, index: u16) -> Option<Group> {
        self.classes.get(index as usize).map(|c| c.group)
    }

    pub fn index_of(&self, name: &str) -> Option<u16> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.index)
    }

    /// Like [`index_of`](Self::index_of) but returns a lookup error.
    pub fn require(&self, name: &str) -> Result<u16> {
        self.index_of(name).ok_or_else(|| {
            Error::validation(format!("scheme `{}` has no class `{name}`", self.scheme_id))
        })
    }

    /// Every index except 0.
    pub fn foreground(&self) -> impl Iterator<Item = u16> + '_ {
        (1..self.classes.len()).map(|i| i as u16)
    }
}

/// Lookup table of schemes by id.
#[derive(Debug, Clone)]
pub struct Registry {
    schemes: BTreeMap<String, Arc<ClassScheme>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            schemes: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        use Group::*;
        let mut reg = Registry::empty();

        let mut tissue6 = vec![("background", Background)];
        tissue6.extend(TISSUE_FOREGROUND.iter().map(|n| (*n, Foreground)));
        reg.insert(ClassScheme::from_names(PUMA_TISSUE6, &tissue6));

        let primary: Vec<String> = TISSUE_FOREGROUND.iter().map(|n| format!("primary_{n}")).collect();
        let metastatic: Vec<String> =
            TISSUE_FOREGROUND.iter().map(|n| format!("metastatic_{n}")).collect();
        let mut ext = vec![("background", Background)];
        ext.extend(primary.iter().map(|n| (n.as_str(), Primary)));
        ext.extend(metastatic.iter().map(|n| (n.as_str(), Metastatic)));
        reg.insert(ClassScheme::from_names(PUMA_EXT11, &ext));

        reg.insert(ClassScheme::from_names(
            NUCLEI_TRACK1,
            &[
                ("background", Background),
                ("tumor", Foreground),
                ("lymphocyte", Foreground),
                ("other", Foreground),
            ],
        ));
        reg.insert(ClassScheme::from_names(
            NUCLEI_TRACK2,
            &[
                ("background", Background),
                ("tumor", Foreground),
                ("lymphocyte", Foreground),
                ("plasma_cell", Foreground),
                ("histiocyte", Foreground),
                ("melanophage", Foreground),
                ("neutrophil", Foreground),
                ("stroma_cell", Foreground),
                ("endothelium", Foreground),
                ("epithelium", Foreground),
                ("apoptotic_cell", Foreground),
            ],
        ));
        reg.insert(ClassScheme::from_names(
            MONUSAC_NUCLEI,
            &[
                ("background", Background),
                ("epithelial", Foreground),
                ("lymphocyte", Foreground),
                ("neutrophil", Foreground),
                ("macrophage", Foreground),
            ],
        ));
        reg.insert(ClassScheme::from_names(
            PANOPTILS_TISSUE,
            &[
                ("exclude", Background),
                ("cancerous_epithelium", Foreground),
                ("stroma", Foreground),
                ("tils", Foreground),
                ("normal_epithelium", Foreground),
                ("junk_debris", Foreground),
                ("blood_vessel", Foreground),
                ("other", Background),
                ("whitespace", Background),
            ],
        ));
        reg.insert(ClassScheme::from_names(
            PANOPTILS_NUCLEI,
            &[
                ("exclude", Background),
                ("cancer_nucleus", Foreground),
                ("stromal_nucleus", Foreground),
                ("large_stromal_nucleus", Foreground),
                ("lymphocyte_nucleus", Foreground),
                ("plasma_cell_nucleus", Foreground),
                ("normal_epithelial_nucleus", Foreground),
                ("other_nucleus", Foreground),
                ("unknown_nucleus", Foreground),
                ("background", Background),
            ],
        ));
        reg
    }

    fn insert(&mut self, scheme: ClassScheme) {
        self.schemes.insert(scheme.scheme_id.clone(), Arc::new(scheme));
    }

    /// Adds a scheme. Re-registering an id with a different definition is an error.
    pub fn register(&mut self, scheme: ClassScheme) -> Result<Arc<ClassScheme>> {
        if let Some(existing) = self.schemes.get(scheme.id()) {
            if **existing != scheme {
                return Err(Error::validation(format!(
                    "scheme `{}` already registered with a different class list",
                    scheme.id()
                )));
            }
            return Ok(existing.clone());
        }
        let arc = Arc::new(scheme);
        self.schemes.insert(arc.scheme_id.clone(), arc.clone());
        Ok(arc)
    }

    pub fn register_file(&mut self, path: impl AsRef<Path>) -> Result<Arc<ClassScheme>> {
        self.register(ClassScheme::from_json_file(path)?)
    }

    pub fn get(&self, scheme_id: &str) -> Result<Arc<ClassScheme>> {
        self.schemes
            .get(scheme_id)
            .cloned()
            .ok_or_else(|| Error::UnknownScheme(scheme_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }
}

/// Looks up a builtin scheme.
pub fn get_scheme(scheme_id: &str) -> Result<Arc<ClassScheme>> {
    Registry::builtin().get(scheme_id)
}

/// Total mapping from one scheme's indices to another's.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    source: Arc<ClassScheme>,
    target: Arc<ClassScheme>,
    mapping: Vec<u16>,
    /// Source indices whose presence rejects the whole image.
    drop_set: BTreeSet<u16>,
    /// If non-empty, an image is rejected unless it holds at least one of these source indices.
    require_any: BTreeSet<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemapOutcome {
    Mapped(LabelMap),
    Rejected(String),
}

impl RemapOutcome {
    pub fn mapped(self) -> Option<LabelMap> {
        match self {
            RemapOutcome::Mapped(m) => Some(m),
            RemapOutcome::Rejected(_) => None,
        }
    }
}

impl RemapTable {
    pub fn new(
        source: Arc<ClassScheme>,
        target: Arc<ClassScheme>,
        mapping: Vec<u16>,
        drop_set: BTreeSet<u16>,
    ) -> Result<Self> {
        if mapping.len() != source.len() {
            return Err(Error::validation(format!(
                "remap {}→{}: mapping has {} entries, source has {} classes",
                source.id(),
                target.id(),
                mapping.len(),
                source.len()
            )));
        }
        if let Some(bad) = mapping.iter().find(|&&t| t as usize >= target.len()) {
            return Err(Error::validation(format!(
                "remap {}→{}: target index {bad} out of range",
                source.id(),
                target.id()
            )));
        }
        if let Some(bad) = drop_set.iter().find(|&&s| s as usize >= source.len()) {
            return Err(Error::validation(format!("drop index {bad} out of range")));
        }
        Ok(RemapTable {
            source,
            target,
            mapping,
            drop_set,
            require_any: BTreeSet::new(),
        })
    }

    pub fn with_required(mut self, require_any: BTreeSet<u16>) -> Result<Self> {
        if let Some(bad) = require_any.iter().find(|&&s| s as usize >= self.source.len()) {
            return Err(Error::validation(format!("required index {bad} out of range")));
        }
        self.require_any = require_any;
        Ok(self)
    }

    pub fn identity(scheme: Arc<ClassScheme>) -> Self {
        let mapping = (0..scheme.len() as u16).collect();
        RemapTable {
            source: scheme.clone(),
            target: scheme,
            mapping,
            drop_set: BTreeSet::new(),
            require_any: BTreeSet::new(),
        }
    }

    /// Extended 11-class → 6-class projection: `i` and `i + 5` both map to `i`.
    pub fn ext11_to_tissue6(reg: &Registry) -> Result<Self> {
        let ext = reg.get(PUMA_EXT11)?;
        let base = reg.get(PUMA_TISSUE6)?;
        let mapping = ext
            .classes()
            .iter()
            .map(|c| {
                let stripped = c
                    .name
                    .strip_prefix("primary_")
                    .or_else(|| c.name.strip_prefix("metastatic_"))
                    .unwrap_or(&c.name);
                base.require(stripped)
            })
            .collect::<Result<Vec<_>>>()?;
        RemapTable::new(ext, base, mapping, BTreeSet::new())
    }

    /// PanopTILs tissue labels merged onto the PUMA 6-class scheme. Images with
    /// normal epithelium are rejected, as are images without tumor or necrosis.
    pub fn panoptils_to_tissue6(reg: &Registry) -> Result<Self> {
        let src = reg.get(PANOPTILS_TISSUE)?;
        let dst = reg.get(PUMA_TISSUE6)?;
        let pairs = [
            ("exclude", "background"),
            ("cancerous_epithelium", "tumor"),
            ("stroma", "stroma"),
            ("tils", "stroma"),
            ("normal_epithelium", "background"),
            ("junk_debris", "necrosis"),
            ("blood_vessel", "blood_vessel"),
            ("other", "background"),
            ("whitespace", "background"),
        ];
        let mut mapping = vec![0u16; src.len()];
        for (s, t) in pairs {
            mapping[src.require(s)? as usize] = dst.require(t)?;
        }
        let drop: BTreeSet<u16> = [src.require("normal_epithelium")?].into();
        let required: BTreeSet<u16> =
            [src.require("cancerous_epithelium")?, src.require("junk_debris")?].into();
        RemapTable::new(src, dst, mapping, drop)?.with_required(required)
    }

    pub fn source(&self) -> &Arc<ClassScheme> {
        &self.source
    }

    pub fn target(&self) -> &Arc<ClassScheme> {
        &self.target
    }

    pub fn map_index(&self, source_index: u16) -> u16 {
        self.mapping[source_index as usize]
    }
}

/// Applies `table` to every pixel, or rejects the image per the table's drop rules.
pub fn remap_labels(map: &LabelMap, table: &RemapTable) -> Result<RemapOutcome> {
    if map.scheme().id() != table.source.id() {
        return Err(Error::validation(format!(
            "label map is `{}` but remap source is `{}`",
            map.scheme().id(),
            table.source.id()
        )));
    }
    let mut present = vec![false; table.source.len()];
    for &v in map.data() {
        present[v as usize] = true;
    }
    if let Some(d) = table.drop_set.iter().find(|&&d| present[d as usize]) {
        return Ok(RemapOutcome::Rejected(format!(
            "contains excluded class `{}`",
            table.source.name(*d).unwrap_or("?")
        )));
    }
    if !table.require_any.is_empty() && !table.require_any.iter().any(|&r| present[r as usize]) {
        return Ok(RemapOutcome::Rejected("contains none of the required classes".into()));
    }
    let data = map.data().iter().map(|&v| table.mapping[v as usize]).collect();
    let out = LabelMap::new(table.target.clone(), map.height(), map.width(), data)?;
    Ok(RemapOutcome::Mapped(out))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GroupCounts {
    pub background: u64,
    pub primary: u64,
    pub metastatic: u64,
    pub foreground: u64,
}

impl GroupCounts {
    pub fn total(&self) -> u64 {
        self.background + self.primary + self.metastatic + self.foreground
    }
}

/// Pixel count per group tag.
pub fn group_counts(map: &LabelMap) -> GroupCounts {
    let scheme = map.scheme();
    let hist = map.histogram();
    let mut out = GroupCounts::default();
    for (idx, &n) in hist.iter().enumerate() {
        let n = n as u64;
        match scheme.group(idx as u16).unwrap_or(Group::Background) {
            Group::Background => out.background += n,
            Group::Primary => out.primary += n,
            Group::Metastatic => out.metastatic += n,
            Group::Foreground => out.foreground += n,
        }
    }
    out
}
