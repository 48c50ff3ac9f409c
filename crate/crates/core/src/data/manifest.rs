//! Dataset manifest: `<root>/manifest.json` describing per-source frame
//! and label files stored under `<root>/<source_id>/`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMetadata {
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub lighting: String,
    #[serde(default)]
    pub motion: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    /// Frame file names relative to `<root>/<id>/`, in temporal order.
    pub frames: Vec<String>,
    /// One label file per frame.
    pub labels: Vec<String>,
    pub split: Split,
    #[serde(default)]
    pub metadata: SourceMetadata,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sources: Vec<SourceRecord>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            sources: Vec::new(),
            root: root.into(),
        }
    }

    pub fn source_dir(&self, source: &SourceRecord) -> PathBuf {
        self.root.join(&source.id)
    }

    pub fn frame_path(&self, source: &SourceRecord, i: usize) -> PathBuf {
        self.source_dir(source).join(&source.frames[i])
    }

    pub fn label_path(&self, source: &SourceRecord, i: usize) -> PathBuf {
        self.source_dir(source).join(&source.labels[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SourceRecord> {
        self.sources.iter().filter(move |s| s.split == split)
    }

    /// Checks structure and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut ids = HashSet::new();
        for s in &self.sources {
            if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id == "." || s.id == ".." {
                return Err(Error::Manifest(format!("invalid source id `{}`", s.id)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Manifest(format!(
                    "source `{}` listed more than once; splits must be disjoint",
                    s.id
                )));
            }
            if s.frames.len() != s.labels.len() {
                return Err(Error::Manifest(format!(
                    "source `{}` has {} frames but {} labels",
                    s.id,
                    s.frames.len(),
                    s.labels.len()
                )));
            }
            for i in 0..s.frames.len() {
                for p in [self.frame_path(s, i), self.label_path(s, i)] {
                    if !p.is_file() {
                        return Err(Error::MissingFile(p));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Loads and validates a manifest. `path` may name the JSON file or the
/// dataset root containing `manifest.json`.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::Manifest(format!("{}: {e}", file.display())))?;
    let mut m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", file.display())))?;
    m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate()?;
    Ok(m)
}
