use serde::{Deserialize, Serialize};

use super::raster::{LabelMap, RasterImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (expected train or test)"))),
        }
    }
}

/// Two coregistered acquisitions of the same area and their change mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub name: String,
    pub img1: RasterImage,
    pub img2: RasterImage,
    pub label: LabelMap,
    pub split: Split,
}

impl SamplePair {
    pub fn new(
        name: impl Into<String>,
        img1: RasterImage,
        img2: RasterImage,
        label: LabelMap,
        split: Split,
    ) -> Result<Self> {
        let name = name.into();
        let dims = |r: &RasterImage| (r.height(), r.width());
        if dims(&img1) != dims(&img2) {
            return Err(Error::Data(format!(
                "pair {name}: image sizes differ ({}x{} vs {}x{})",
                img1.width(),
                img1.height(),
                img2.width(),
                img2.height()
            )));
        }
        if img1.bands() != img2.bands() {
            return Err(Error::Data(format!(
                "pair {name}: band counts differ ({} vs {})",
                img1.bands(),
                img2.bands()
            )));
        }
        if (label.height(), label.width()) != dims(&img1) {
            return Err(Error::Data(format!(
                "pair {name}: label is {}x{}, images are {}x{}",
                label.width(),
                label.height(),
                img1.width(),
                img1.height()
            )));
        }
        Ok(SamplePair {
            name,
            img1,
            img2,
            label,
            split,
        })
    }

    pub fn bands(&self) -> usize {
        self.img1.bands()
    }

    pub fn height(&self) -> usize {
        self.img1.height()
    }

    pub fn width(&self) -> usize {
        self.img1.width()
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        Ok(SamplePair {
            name: self.name.clone(),
            img1: self.img1.crop(x, y, width, height)?,
            img2: self.img2.crop(x, y, width, height)?,
            label: self.label.crop(x, y, width, height)?,
            split: self.split,
        })
    }
}
