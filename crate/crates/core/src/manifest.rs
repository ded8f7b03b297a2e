//! Dataset manifests.
//!
//! A manifest is a TSV file with one image per line:
//! `image_path<TAB>prompt`, the prompt being optional. Paths are
//! resolved relative to the manifest's directory. Entry order is the
//! evaluation order; image ids are the file stems and must be unique.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Unique id, the image file stem.
    pub id: String,
    /// Absolute or manifest-relative path as written in the file.
    pub path: PathBuf,
    pub prompt: Option<String>,
}

/// Ordered list of dataset images.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    base: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses a TSV manifest. Blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(2, '\t');
            let img = fields.next().unwrap().trim();
            if img.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    detail: "empty image path".into(),
                });
            }
            let prompt = fields
                .next()
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(String::from);
            let img_path = PathBuf::from(img);
            let id = img_path
                .file_stem()
                .and_then(|s| s.to_str())
                .map(String::from)
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    detail: format!("cannot derive an id from `{img}`"),
                })?;
            if !seen.insert(id.clone()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    detail: format!("duplicate image id `{id}`"),
                });
            }
            entries.push(ManifestEntry {
                id,
                path: img_path,
                prompt,
            });
        }
        if entries.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                detail: "manifest lists no images".into(),
            });
        }
        Ok(DatasetManifest { base, entries })
    }

    /// Writes the TSV form; inverse of [`load`](Self::load).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.path.to_string_lossy());
            if let Some(p) = &e.prompt {
                out.push('\t');
                out.push_str(p);
            }
            out.push('\n');
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
            }
        }
        std::fs::write(path, out).map_err(Error::io(path))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Path of an entry resolved against the manifest directory.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base.join(&entry.path)
        }
    }
}
