//! Dataset manifests: the JSON document binding ground-truth masks,
//! per-learner probability maps and condition tags.
//!
//! ```json
//! {
//!   "version": 1,
//!   "learner_ids": ["unet-s0", "refinenet-s0"],
//!   "items": [
//!     {
//!       "id": "side-0001",
//!       "image_path": "images/side-0001.png",
//!       "gt_mask_path": "masks/side-0001.png",
//!       "learner_map_paths": ["maps/side-0001.k0.pmap", "maps/side-0001.k1.pmap"],
//!       "tags": {"conditions": ["O2", "GH"], "background": "cluttered", "view": "side"}
//!     }
//!   ],
//!   "profiles": [
//!     {"name": "MyData", "epistemic_triggers": ["RG"], "aleatoric_triggers": ["MBN"]}
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{self, Dims};
use crate::taxonomy::{self, ConditionTagSet, ScenarioProfile};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    /// Labels for the K learners, in map order. Defaults to `learner-<k>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner_ids: Option<Vec<String>>,
    pub items: Vec<ManifestItem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<ScenarioProfile>,
    /// How the item list was drawn, when it is a sampled subset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingRecord>,
    /// Generator that produced the rasters, for synthetic manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    pub gt_mask_path: PathBuf,
    pub learner_map_paths: Vec<PathBuf>,
    pub tags: ConditionTagSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRecord {
    pub algorithm: String,
    pub seed: u64,
    pub per_group: usize,
}

impl DatasetManifest {
    pub fn new(items: Vec<ManifestItem>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            learner_ids: None,
            items,
            profiles: Vec::new(),
            sampling: None,
            generator: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let version = serde_json::from_str::<serde_json::Value>(text)
            .map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?
            .get("version")
            .map(|v| v.as_u64());
        match version {
            None => return Err(Error::Format("manifest has no version field".into())),
            Some(Some(v)) if v == u64::from(MANIFEST_VERSION) => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "unsupported manifest version {v:?}, expected {MANIFEST_VERSION}"
                )))
            }
        }
        let mut manifest: DatasetManifest = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("invalid manifest: {e}")))?;
        manifest.base_dir = base_dir.into();
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// K for this run: the declared learner list, else the first item's map count.
    pub fn learner_count(&self) -> Option<usize> {
        self.learner_ids
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.items.first().map(|i| i.learner_map_paths.len()))
    }

    pub fn learner_labels(&self) -> Vec<String> {
        match &self.learner_ids {
            Some(ids) => ids.clone(),
            None => (0..self.learner_count().unwrap_or(0))
                .map(|k| format!("learner-{k}"))
                .collect(),
        }
    }

    /// Looks a profile up in the manifest first, then among the built-ins.
    pub fn profile(&self, name: &str) -> Result<ScenarioProfile> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| taxonomy::builtin_profile(name))
            .ok_or_else(|| Error::UnknownProfile(name.to_string()))
    }

    /// Manifest profiles followed by built-ins not shadowed by name.
    pub fn all_profiles(&self) -> Vec<ScenarioProfile> {
        let mut out = self.profiles.clone();
        for p in taxonomy::builtin_profiles() {
            if !out.iter().any(|q| q.name == p.name) {
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    EmptyManifest,
    DuplicateId,
    NoLearners,
    InconsistentLearnerCount,
    DuplicateLearnerId,
    MissingFile,
    UnreadableFile,
    DimensionMismatch,
    InvalidProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.item {
            Some(id) => write!(f, "item {id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn diag(item: Option<&str>, kind: DiagnosticKind, message: String) -> Diagnostic {
    Diagnostic {
        item: item.map(str::to_string),
        kind,
        message,
    }
}

fn check_file(
    manifest: &DatasetManifest,
    id: &str,
    path: &Path,
    read_dims: fn(&Path) -> Result<Dims>,
    out: &mut Vec<Diagnostic>,
) -> Option<Dims> {
    let full = manifest.resolve(path);
    if !full.is_file() {
        out.push(diag(
            Some(id),
            DiagnosticKind::MissingFile,
            format!("missing file {}", full.display()),
        ));
        return None;
    }
    match read_dims(&full) {
        Ok(d) => Some(d),
        Err(e) => {
            out.push(diag(
                Some(id),
                DiagnosticKind::UnreadableFile,
                format!("unreadable file: {e}"),
            ));
            None
        }
    }
}

fn validate_item(manifest: &DatasetManifest, item: &ManifestItem, k: usize) -> Vec<Diagnostic> {
    let id = item.id.as_str();
    let mut out = Vec::new();
    let n = item.learner_map_paths.len();
    if n == 0 {
        out.push(diag(
            Some(id),
            DiagnosticKind::NoLearners,
            "no learner maps listed".into(),
        ));
    } else if n != k {
        out.push(diag(
            Some(id),
            DiagnosticKind::InconsistentLearnerCount,
            format!("inconsistent learner count: {n} learner maps in a K={k} run"),
        ));
    }

    let mut sized: Vec<(String, Dims)> = Vec::new();
    if let Some(d) = check_file(
        manifest,
        id,
        &item.gt_mask_path,
        |p| raster::read_image_dims(p),
        &mut out,
    ) {
        sized.push((item.gt_mask_path.display().to_string(), d));
    }
    for p in &item.learner_map_paths {
        if let Some(d) = check_file(manifest, id, p, |p| raster::read_pmap_dims(p), &mut out) {
            sized.push((p.display().to_string(), d));
        }
    }
    if let Some(p) = &item.image_path {
        if let Some(d) = check_file(manifest, id, p, |p| raster::read_image_dims(p), &mut out) {
            sized.push((p.display().to_string(), d));
        }
    }
    if let Some((first_name, first)) = sized.first() {
        for (name, d) in &sized[1..] {
            if d != first {
                out.push(diag(
                    Some(id),
                    DiagnosticKind::DimensionMismatch,
                    format!("{name} is {d} but {first_name} is {first}"),
                ));
            }
        }
    }
    out
}

/// Checks every manifest invariant; an empty result means the manifest is runnable.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if manifest.items.is_empty() {
        out.push(diag(
            None,
            DiagnosticKind::EmptyManifest,
            "manifest lists no items".into(),
        ));
    }

    let mut seen = HashSet::new();
    for item in &manifest.items {
        if !seen.insert(item.id.as_str()) {
            out.push(diag(
                Some(&item.id),
                DiagnosticKind::DuplicateId,
                format!("duplicate item id {:?}", item.id),
            ));
        }
    }

    if let Some(ids) = &manifest.learner_ids {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id.as_str()) {
                out.push(diag(
                    None,
                    DiagnosticKind::DuplicateLearnerId,
                    format!("duplicate learner id {id:?}"),
                ));
            }
        }
    }

    let mut names = HashSet::new();
    for p in &manifest.profiles {
        if !names.insert(p.name.as_str()) {
            out.push(diag(
                None,
                DiagnosticKind::InvalidProfile,
                format!("profile {:?} defined twice", p.name),
            ));
        }
        for problem in p.problems() {
            out.push(diag(None, DiagnosticKind::InvalidProfile, problem));
        }
    }

    let k = manifest.learner_count().unwrap_or(0);
    for item_diags in par::map(&manifest.items, |item| validate_item(manifest, item, k)) {
        out.extend(item_diags);
    }
    out
}
