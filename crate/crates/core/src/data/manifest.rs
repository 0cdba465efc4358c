//! Dataset manifests: a JSON list of image pairs with split tags.
//!
//! ```json
//! {"name": "szada", "channels": 3,
//!  "pairs": [{"name": "1", "img1": "1/im1.png", "img2": "1/im2.png",
//!             "label": "1/gt.png", "split": "test",
//!             "crop": {"x": 0, "y": 0, "width": 748, "height": 448}}]}
//! ```
//!
//! Paths are relative to the manifest. `crop` is optional and selects a
//! window of the pair. Entries whose name contains `Archieve` are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pair::{SamplePair, Split};
use super::raster::{LabelMap, RasterImage};
use super::stats::NormStats;
use crate::error::{Error, Result};

const SKIPPED_NAME: &str = "archieve";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub img1: PathBuf,
    pub img2: PathBuf,
    pub label: PathBuf,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<Crop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub channels: usize,
    pub pairs: Vec<PairEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormStats>,
    /// Directory the entry paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Parses and validates a manifest. Every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    fn validate(&mut self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Data(format!(
                "manifest {}: channels must be positive",
                self.name
            )));
        }
        self.pairs.retain(|p| {
            let skip = p.name.to_ascii_lowercase().contains(SKIPPED_NAME);
            if skip {
                log::info!("skipping pair {}", p.name);
            }
            !skip
        });
        if let Some(n) = &self.normalization {
            if n.bands() != self.channels || n.std.len() != self.channels {
                return Err(Error::Data(format!(
                    "manifest {}: normalization covers {} bands, expected {}",
                    self.name,
                    n.bands(),
                    self.channels
                )));
            }
        }
        for p in &self.pairs {
            for f in [&p.img1, &p.img2, &p.label] {
                let full = self.root.join(f);
                if !full.is_file() {
                    return Err(Error::Data(format!("pair {}: missing file {}", p.name, full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    /// Reads and validates one pair.
    pub fn load_pair(&self, entry: &PairEntry) -> Result<SamplePair> {
        let named = |e: Error| Error::Data(format!("pair {}: {e}", entry.name));
        let img1 = RasterImage::load(&self.root.join(&entry.img1)).map_err(named)?;
        let img2 = RasterImage::load(&self.root.join(&entry.img2)).map_err(named)?;
        let label = LabelMap::load_png(&self.root.join(&entry.label)).map_err(named)?;
        for img in [&img1, &img2] {
            if img.bands() != self.channels {
                return Err(Error::Data(format!(
                    "pair {}: {} has {} bands, manifest declares {}",
                    entry.name,
                    img.source().display(),
                    img.bands(),
                    self.channels
                )));
            }
        }
        let pair = SamplePair::new(entry.name.clone(), img1, img2, label, entry.split)?;
        match entry.crop {
            Some(c) => pair.crop(c.x, c.y, c.width, c.height).map_err(named),
            None => Ok(pair),
        }
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<SamplePair>> {
        self.entries(split).map(|e| self.load_pair(e)).collect()
    }
}
