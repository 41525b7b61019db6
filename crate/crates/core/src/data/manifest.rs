use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::load_image;
use super::synthetic::SyntheticConfig;
use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const MANIFEST_VERSION: u32 = 1;

/// Ground-truth class. Detector scores are probabilities of [`Label::Fake`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Fake];

    /// Binary target used by the loss: fake = 1, real = 0.
    pub fn target(self) -> f32 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn from_score(score: f32, threshold: f32) -> Self {
        if score > threshold {
            Label::Fake
        } else {
            Label::Real
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::InvalidArgument(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub resolution: usize,
    /// Hex SHA-256 of the generating configuration (or of the ingestion inputs).
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticConfig>,
    pub records: Vec<Record>,
    #[serde(skip)]
    root: PathBuf,
}

/// Images of one split held in memory, with labels and provenance.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Vec<RgbImage>,
    pub labels: Vec<Label>,
    pub paths: Vec<PathBuf>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Subset holding only `label`, order preserved.
    pub fn of_class(&self, label: Label) -> LabeledImages {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        self.select(&keep)
    }

    pub fn select(&self, indices: &[usize]) -> LabeledImages {
        LabeledImages {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            paths: indices.iter().map(|&i| self.paths[i].clone()).collect(),
        }
    }

    pub fn refs(&self) -> Vec<&RgbImage> {
        self.images.iter().collect()
    }
}

impl DatasetManifest {
    pub fn new(
        root: impl Into<PathBuf>,
        resolution: usize,
        digest: String,
        generator: Option<SyntheticConfig>,
        records: Vec<Record>,
    ) -> Self {
        Self {
            version: MANIFEST_VERSION,
            resolution,
            digest,
            generator,
            records,
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = root.into();
    }

    pub fn manifest_path(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Writes `manifest.json` into the manifest root.
    pub fn save(&self) -> Result<PathBuf> {
        let path = Self::manifest_path(&self.root);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Checks disjoint splits, both labels in each split, and that files exist.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.path) {
                return Err(Error::InvalidArgument(format!(
                    "record {} appears more than once",
                    r.path.display()
                )));
            }
        }
        for split in Split::ALL {
            for label in Label::ALL {
                if !self
                    .records
                    .iter()
                    .any(|r| r.split == split && r.label == label)
                {
                    return Err(Error::Empty(format!("{label} images in {split} split")));
                }
            }
        }
        for r in &self.records {
            let p = self.root.join(&r.path);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "listed image missing"),
                ));
            }
        }
        Ok(())
    }

    pub fn load_split(&self, split: Split) -> Result<LabeledImages> {
        let records: Vec<&Record> = self.records_in(split).collect();
        if records.is_empty() {
            return Err(Error::Empty(format!("{split} split")));
        }
        let mut out = LabeledImages {
            images: Vec::with_capacity(records.len()),
            labels: Vec::with_capacity(records.len()),
            paths: Vec::with_capacity(records.len()),
        };
        for r in records {
            let img = load_image(&self.root.join(&r.path))?;
            if img.height() != self.resolution || img.width() != self.resolution {
                return Err(Error::shape(
                    "load_split",
                    &[self.resolution, self.resolution],
                    &[img.height(), img.width()],
                ));
            }
            out.images.push(img);
            out.labels.push(r.label);
            out.paths.push(r.path.clone());
        }
        Ok(out)
    }
}
