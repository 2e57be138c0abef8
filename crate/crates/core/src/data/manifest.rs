//! JSON-lines dataset manifests: one `{id, image, mask, split}` record per
//! sample, paths relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{read_mask, read_pgm};
use crate::error::{Error, Result};
use crate::image::Sample;

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
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut images = HashSet::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(Error::invalid(
                    "manifest",
                    format!("duplicate id `{}`", e.id),
                ));
            }
            if !images.insert(&e.image) {
                return Err(Error::invalid(
                    "manifest",
                    format!("image {} listed twice", e.image.display()),
                ));
            }
        }
        if !self.entries.iter().any(|e| e.split == Split::Train) {
            return Err(Error::invalid("manifest", "no training entries"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: i + 1,
                msg: format!("line {}: {e}", i + 1),
            })?;
            entries.push(entry);
        }
        let m = DatasetManifest {
            entries,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split)
            .map(|e| {
                let image = read_pgm(self.resolve(&e.image))?;
                let mask = read_mask(self.resolve(&e.mask))?;
                Sample::new(e.id.clone(), image, mask)
            })
            .collect()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let d = Dataset {
            train: self.load_split(Split::Train)?,
            val: self.load_split(Split::Val)?,
            test: self.load_split(Split::Test)?,
        };
        d.check_extents()?;
        Ok(d)
    }
}

/// Samples of a manifest loaded into memory, raw intensities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn extent(&self) -> Option<(usize, usize)> {
        self.train.first().map(|s| (s.image.width, s.image.height))
    }

    pub fn check_extents(&self) -> Result<()> {
        let Some((w, h)) = self.extent() else {
            return Err(Error::invalid("dataset", "no training samples"));
        };
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            if s.image.width != w || s.image.height != h {
                return Err(Error::shape(
                    "dataset",
                    format!(
                        "sample `{}` is {}x{}, expected {w}x{h}",
                        s.id, s.image.width, s.image.height
                    ),
                ));
            }
        }
        Ok(())
    }
}
