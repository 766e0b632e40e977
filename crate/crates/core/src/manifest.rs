//! Dataset manifests: which images exist, their roles and labels, and where
//! their feature tensors and masks live. Paths are resolved relative to the
//! manifest's directory; nothing is opened at load time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_LEVELS: [usize; 2] = [2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Nominal,
    Anomalous,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub role: Role,
    pub label: u8,
    /// Hierarchy level (as a decimal string key) to ETF feature map path.
    pub feature_paths: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub mask_path: Option<PathBuf>,
    /// `[height, width]` in pixels.
    pub image_size: [usize; 2],
    /// Marks inpainted anomalies so augmentation sweeps can count them.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

impl ManifestEntry {
    pub fn feature_path(&self, level: usize) -> Option<&Path> {
        self.feature_paths
            .get(&level.to_string())
            .map(PathBuf::as_path)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_size[0], self.image_size[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            entries,
            base_dir: PathBuf::new(),
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    /// Checks every schema invariant against the given feature levels.
    pub fn validate(&self, levels: &[usize]) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::schema(
                "version",
                format!("expected {MANIFEST_VERSION}, found {}", self.version),
            ));
        }
        let want: BTreeSet<usize> = levels.iter().copied().collect();
        let mut seen = BTreeSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let at = |f: &str| format!("entries[{i}].{f}");
            if e.image_id.is_empty() {
                return Err(Error::schema(at("image_id"), "must not be empty"));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::schema(
                    at("image_id"),
                    format!("duplicate id {:?}", e.image_id),
                ));
            }
            if e.label > 1 {
                return Err(Error::schema(at("label"), "must be 0 or 1"));
            }
            match e.role {
                Role::Nominal if e.label != 0 => {
                    return Err(Error::schema(
                        at("label"),
                        "nominal entries must have label 0",
                    ));
                }
                Role::Anomalous if e.label != 1 => {
                    return Err(Error::schema(
                        at("label"),
                        "anomalous entries must have label 1",
                    ));
                }
                Role::Anomalous if e.mask_path.is_none() => {
                    return Err(Error::schema(
                        at("mask_path"),
                        "anomalous entries require a mask",
                    ));
                }
                _ => {}
            }
            let mut have = BTreeSet::new();
            for key in e.feature_paths.keys() {
                let level = key.parse::<usize>().map_err(|_| {
                    Error::schema(
                        at("feature_paths"),
                        format!("level key {key:?} is not an integer"),
                    )
                })?;
                have.insert(level);
            }
            if have != want {
                return Err(Error::schema(
                    at("feature_paths"),
                    format!("levels {have:?} do not match configured {want:?}"),
                ));
            }
            if e.image_size.contains(&0) {
                return Err(Error::schema(at("image_size"), "dimensions must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads and validates a manifest against the default `{2, 3}` levels.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    load_manifest_with_levels(path, &DEFAULT_LEVELS)
}

pub fn load_manifest_with_levels(
    path: impl AsRef<Path>,
    levels: &[usize],
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = parse_manifest(&text)?
        .with_base_dir(path.parent().map(Path::to_path_buf).unwrap_or_default());
    manifest.validate(levels)?;
    Ok(manifest)
}

/// Parses without validating invariants; type errors carry the field path.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        Error::schema(field, err.into_inner().to_string())
    })
}
