//! Raster and label ingestion: 8-bit PNG and raw planar float32 with a
//! one-line text header.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const RAW_EXTENSION: &str = "rawf32";
pub const HEADER_EXTENSION: &str = "hdr";

/// Multi-band image stored band-major (all of band 0, then band 1, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    bands: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    source: PathBuf,
}

impl RasterImage {
    pub fn new(bands: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::Data(format!(
                "raster dimensions must be positive, got {bands}x{height}x{width}"
            )));
        }
        if values.len() != bands * height * width {
            return Err(Error::Data(format!(
                "raster buffer has {} values, expected {}",
                values.len(),
                bands * height * width
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("raster contains non-finite values".into()));
        }
        Ok(RasterImage {
            bands,
            height,
            width,
            values,
            source: PathBuf::new(),
        })
    }

    pub fn with_source(mut self, source: impl Into<PathBuf>) -> Self {
        self.source = source.into();
        self
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[b * plane..(b + 1) * plane]
    }

    /// `(1, bands, height, width)` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, self.bands, self.height, self.width), self.values.clone())
            .expect("raster invariant")
    }

    /// Loads a PNG (`.png`) or raw float32 (`.rawf32` + `.hdr`) raster.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => Self::load_png(path),
            Some(e) if e.eq_ignore_ascii_case(RAW_EXTENSION) => Self::load_raw(path),
            _ => Err(Error::Data(format!(
                "{}: unsupported raster format (expected .png or .{RAW_EXTENSION})",
                path.display()
            ))),
        }
    }

    /// 8-bit grayscale or RGB PNG; values keep their 0–255 range.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (bands, raw) = match img {
            DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
            DynamicImage::ImageRgb8(rgb) => (3, deinterleave(rgb.as_raw(), 3)),
            other => {
                return Err(Error::Data(format!(
                    "{}: expected 8-bit grayscale or RGB PNG, got {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let values = raw.into_iter().map(f32::from).collect();
        Ok(Self::new(bands, height, width, values)?.with_source(path))
    }

    /// Raw little-endian planar float32 with a sidecar `bands height width`
    /// header.
    pub fn load_raw(path: &Path) -> Result<Self> {
        let header_path = path.with_extension(HEADER_EXTENSION);
        let header = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data(format!("{}: malformed header {header:?}", header_path.display())))?;
        let [bands, height, width] = dims[..] else {
            return Err(Error::Data(format!(
                "{}: header must be `bands height width`, got {header:?}",
                header_path.display()
            )));
        };
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != bands * height * width * 4 {
            return Err(Error::Data(format!(
                "{}: {} bytes, header implies {}",
                path.display(),
                bytes.len(),
                bands * height * width * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(bands, height, width, values)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
            .map(|r| r.with_source(path))
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let header_path = path.with_extension(HEADER_EXTENSION);
        fs::write(&header_path, format!("{} {} {}\n", self.bands, self.height, self.width))
            .map_err(|e| Error::io(&header_path, e))?;
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Copies the `width × height` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::Data(format!(
                "crop {width}x{height}+{x}+{y} outside {}x{} raster",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(self.bands * width * height);
        for b in 0..self.bands {
            let band = self.band(b);
            for row in y..y + height {
                values.extend_from_slice(&band[row * self.width + x..row * self.width + x + width]);
            }
        }
        Ok(RasterImage {
            bands: self.bands,
            height,
            width,
            values,
            source: self.source.clone(),
        })
    }
}

/// Interleaved pixels to band-major planes.
fn deinterleave(raw: &[u8], bands: usize) -> Vec<u8> {
    (0..bands)
        .flat_map(|b| raw.iter().skip(b).step_by(bands).copied())
        .collect()
}

/// Binary change mask, 1 = change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Data(format!(
                "label buffer has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("label value {v} is not 0 or 1")));
        }
        Ok(LabelMap { height, width, data })
    }

    /// Binarizes an 8-bit mask: values above 127 mark change.
    pub fn from_gray(img: &GrayImage) -> Self {
        LabelMap {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| u8::from(v > 127)).collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        match img {
            DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageRgb8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageRgba8(_) => Ok(Self::from_gray(&img.to_luma8())),
            other => Err(Error::Data(format!(
                "{}: labels must be 8-bit PNG, got {:?}",
                path.display(),
                other.color()
            ))),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Number of pixels labelled `class`.
    pub fn count(&self, class: u8) -> u64 {
        self.data.iter().filter(|&&v| v == class).count() as u64
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::Data(format!(
                "crop {width}x{height}+{x}+{y} outside {}x{} label",
                self.width, self.height
            )));
        }
        let data = (y..y + height)
            .flat_map(|row| {
                self.data[row * self.width + x..row * self.width + x + width]
                    .iter()
                    .copied()
            })
            .collect();
        Ok(LabelMap { height, width, data })
    }

    /// Saves as an 8-bit PNG with change = 255.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("label invariant");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
